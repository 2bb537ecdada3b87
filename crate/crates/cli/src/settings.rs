//! Flag > environment > config-file resolution for teacher settings.

use std::str::FromStr;

use codi_core::teacher::TeacherConfig;

pub const ENV_TEACHER_URL: &str = "CODI_TEACHER_URL";
pub const ENV_TEACHER_MODEL: &str = "CODI_TEACHER_MODEL";
pub const ENV_CONCURRENCY: &str = "CODI_CONCURRENCY";

/// Overrides that may arrive as flags.
#[derive(Debug, Default, Clone)]
pub struct TeacherFlags {
    pub url: Option<String>,
    pub model: Option<String>,
    pub concurrency: Option<usize>,
}

fn pick<T: FromStr>(
    flag: Option<T>,
    env: &dyn Fn(&str) -> Option<String>,
    key: &str,
) -> Result<Option<T>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env(key).filter(|v| !v.is_empty()) {
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| format!("{key}={v:?} is not a valid value")),
        None => Ok(None),
    }
}

/// Applies flag and environment overrides on top of the file's teacher section.
pub fn resolve_teacher(
    file: &TeacherConfig,
    flags: &TeacherFlags,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<TeacherConfig, String> {
    let mut cfg = file.clone();
    if let Some(url) = pick(flags.url.clone(), env, ENV_TEACHER_URL)? {
        cfg.endpoint = url;
    }
    if let Some(model) = pick(flags.model.clone(), env, ENV_TEACHER_MODEL)? {
        cfg.model = model;
    }
    if let Some(k) = pick(flags.concurrency, env, ENV_CONCURRENCY)? {
        cfg.max_in_flight = k;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}
