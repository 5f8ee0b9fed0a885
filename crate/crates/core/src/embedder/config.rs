use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, HashProvider, HttpProvider, HttpProviderConfig, PrecomputedProvider, Result};

/// Declarative provider selection, as read from a provider config file.
///
/// ```toml
/// kind = "hash"
/// dim = 64
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        model_id: Option<String>,
        #[serde(default)]
        prefix_roles: bool,
    },
    Precomputed {
        path: PathBuf,
    },
    Http(HttpProviderConfig),
}

fn default_dim() -> usize {
    super::hash::DEFAULT_HASH_DIM
}

impl ProviderConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EmbedError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| EmbedError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Makes relative file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let ProviderConfig::Precomputed { path } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderConfig::Hash {
                dim,
                model_id,
                prefix_roles,
            } => {
                if *dim == 0 {
                    return Err(EmbedError::Config("hash dim must be positive".into()));
                }
                let mut p = HashProvider::new(*dim).with_role_prefixes(*prefix_roles);
                if let Some(m) = model_id {
                    p = p.with_model_id(m.clone());
                }
                Box::new(p)
            }
            ProviderConfig::Precomputed { path } => Box::new(PrecomputedProvider::open(path)?),
            ProviderConfig::Http(cfg) => Box::new(HttpProvider::new(cfg.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_kind() {
        let h: ProviderConfig = toml::from_str("kind = \"hash\"\ndim = 8").unwrap();
        assert_eq!(
            h,
            ProviderConfig::Hash {
                dim: 8,
                model_id: None,
                prefix_roles: false
            }
        );
        let p: ProviderConfig = toml::from_str("kind = \"precomputed\"\npath = \"v.jsonl\"").unwrap();
        assert!(matches!(p, ProviderConfig::Precomputed { .. }));
        let w: ProviderConfig = toml::from_str(
            "kind = \"http\"\nendpoint = \"http://localhost:1/embed\"\nmodel_id = \"intfloat/multilingual-e5-base\"\nmax_batch = 2",
        )
        .unwrap();
        match w {
            ProviderConfig::Http(c) => {
                assert_eq!(c.max_batch, 2);
                assert_eq!(c.max_retries, 3);
                assert_eq!(c.token_env.as_deref(), Some("EMBEDDING_API_TOKEN"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut p = ProviderConfig::Precomputed {
            path: "v.jsonl".into(),
        };
        p.resolve_paths(Path::new("/data/cfg"));
        assert_eq!(
            p,
            ProviderConfig::Precomputed {
                path: "/data/cfg/v.jsonl".into()
            }
        );
    }

    #[test]
    fn builds_hash_provider() {
        let p = ProviderConfig::Hash {
            dim: 4,
            model_id: Some("fixture".into()),
            prefix_roles: false,
        }
        .build()
        .unwrap();
        assert_eq!(p.model_id(), "fixture");
    }
}
