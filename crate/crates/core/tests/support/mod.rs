pub mod oracle;
pub mod server;
