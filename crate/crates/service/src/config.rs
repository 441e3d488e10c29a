use std::path::PathBuf;

/// Service settings, normally read from the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    /// Directory holding the five checkpoints and `pipeline.json` (`AVN_MODEL_DIR`).
    pub model_dir: Option<PathBuf>,
    /// Manifest whose images are served as reading cases (`AVN_CASES`).
    pub cases_manifest: Option<PathBuf>,
    /// Per-session journals (`AVN_SESSION_DIR`).
    pub session_dir: PathBuf,
    /// Static review-ui bundle served at `/` (`AVN_UI_DIR`).
    pub ui_dir: Option<PathBuf>,
    pub port: u16,
    pub bootstrap_seed: u64,
    pub bootstrap_resamples: usize,
    pub max_upload_bytes: usize,
    /// Optional bearer token required on every API call (`AVN_API_TOKEN`).
    pub api_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model_dir: None,
            cases_manifest: None,
            session_dir: PathBuf::from("sessions"),
            ui_dir: None,
            port: 8080,
            bootstrap_seed: 0,
            bootstrap_resamples: 10_000,
            max_upload_bytes: 16 * 1024 * 1024,
            api_token: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Builds a config from an arbitrary key lookup; unset keys keep defaults.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = Self::default();
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
        }
        if let Some(v) = get("AVN_MODEL_DIR") {
            c.model_dir = Some(v.into());
        }
        if let Some(v) = get("AVN_CASES") {
            c.cases_manifest = Some(v.into());
        }
        if let Some(v) = get("AVN_SESSION_DIR") {
            c.session_dir = v.into();
        }
        if let Some(v) = get("AVN_UI_DIR") {
            c.ui_dir = Some(v.into());
        }
        if let Some(v) = get("AVN_PORT") {
            c.port = num("AVN_PORT", v)?;
        }
        if let Some(v) = get("AVN_BOOTSTRAP_SEED") {
            c.bootstrap_seed = num("AVN_BOOTSTRAP_SEED", v)?;
        }
        if let Some(v) = get("AVN_BOOTSTRAP_RESAMPLES") {
            c.bootstrap_resamples = num("AVN_BOOTSTRAP_RESAMPLES", v)?;
        }
        if let Some(v) = get("AVN_MAX_UPLOAD_BYTES") {
            c.max_upload_bytes = num("AVN_MAX_UPLOAD_BYTES", v)?;
        }
        c.api_token = get("AVN_API_TOKEN").filter(|t| !t.is_empty());
        Ok(c)
    }
}
