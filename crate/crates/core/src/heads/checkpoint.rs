//! Head checkpoints: a `key=value` text manifest plus the weight matrices
//! concatenated in declaration order in the binary matrix format.

use std::fmt;
use std::path::{Path, PathBuf};

use super::head::{init_head, HeadConfig, HeadKind, ProjectionHead};
use super::transfusion::AttentionMode;
use crate::error::{Error, Result};
use crate::numerics::io::{matrix_to_bytes, read_matrices};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config: HeadConfig,
    pub seed: u64,
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "kind={}", c.kind.name())?;
        writeln!(f, "dims={},{}", c.dim, c.hidden_width())?;
        writeln!(f, "depth={}", c.depth)?;
        writeln!(f, "heads={}", c.heads)?;
        writeln!(f, "seed={}", self.seed)?;
        let mode = match c.mode {
            AttentionMode::Equation => "equation",
            AttentionMode::CodeListing => "code-listing",
        };
        writeln!(f, "mode={mode}")?;
        writeln!(f, "residual={}", if c.residual { "on" } else { "off" })
    }
}

impl std::str::FromStr for Manifest {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut dims = None;
        let mut depth = None;
        let mut heads = 1;
        let mut seed = 0;
        let mut mode = AttentionMode::CodeListing;
        let mut residual = true;
        let bad = |line: usize, detail: String| Error::Format {
            offset: line as u64,
            detail: format!("manifest line {}: {detail}", line + 1),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(n, format!("expected key=value, got '{line}'")))?;
            let int = |v: &str| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|e| bad(n, format!("{key}: {e}")))
            };
            match key.trim() {
                "kind" => {
                    kind = Some(
                        value
                            .trim()
                            .parse::<HeadKind>()
                            .map_err(|e| bad(n, e.to_string()))?,
                    )
                }
                "dims" => {
                    let parts: Vec<u64> = value.split(',').map(int).collect::<Result<_>>()?;
                    if parts.len() != 2 {
                        return Err(bad(n, "dims needs width,hidden".into()));
                    }
                    dims = Some((parts[0] as usize, parts[1] as usize));
                }
                "depth" => depth = Some(int(value)? as usize),
                "heads" => heads = int(value)? as usize,
                "seed" => seed = int(value)?,
                "mode" => {
                    mode = value
                        .trim()
                        .parse()
                        .map_err(|e: Error| bad(n, e.to_string()))?
                }
                "residual" => {
                    residual = match value.trim() {
                        "on" => true,
                        "off" => false,
                        other => {
                            return Err(bad(
                                n,
                                format!("residual must be on or off, got '{other}'"),
                            ))
                        }
                    }
                }
                other => return Err(bad(n, format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Format {
            offset: 0,
            detail: format!("manifest is missing '{k}'"),
        };
        let (dim, hidden) = dims.ok_or_else(|| missing("dims"))?;
        Ok(Manifest {
            config: HeadConfig {
                kind: kind.ok_or_else(|| missing("kind"))?,
                dim,
                depth: depth.ok_or_else(|| missing("depth"))?,
                heads,
                hidden,
                mode,
                residual,
            },
            seed,
        })
    }
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.manifest")),
        dir.join(format!("{name}.bin")),
    )
}

/// Writes `<name>.manifest` and `<name>.bin` under `dir`.
pub fn save_checkpoint(head: &ProjectionHead, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (manifest, bin) = paths(dir, name);
    let m = Manifest {
        config: head.config.clone(),
        seed: head.seed,
    };
    std::fs::write(manifest, m.to_string())?;
    let mut bytes = Vec::new();
    for p in head.params() {
        bytes.extend(matrix_to_bytes(p));
    }
    std::fs::write(bin, bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, name: &str) -> Result<ProjectionHead> {
    let (manifest, bin) = paths(dir, name);
    let m: Manifest = std::fs::read_to_string(manifest)?.parse()?;
    let mut head = init_head(&m.config, &mut Rng::new(m.seed))?;
    head.seed = m.seed;
    let mats = read_matrices(&std::fs::read(bin)?)?;
    let mut slots = head.params_mut();
    if mats.len() != slots.len() {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "checkpoint holds {} matrices, head needs {}",
                mats.len(),
                slots.len()
            ),
        });
    }
    for (k, (slot, mat)) in slots.iter_mut().zip(mats).enumerate() {
        if slot.shape() != mat.shape() {
            return Err(Error::Format {
                offset: k as u64,
                detail: format!(
                    "matrix {k} is {:?}, expected {:?}",
                    mat.shape(),
                    slot.shape()
                ),
            });
        }
        **slot = mat;
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        for (i, kind) in [HeadKind::Ffn, HeadKind::Transfusion, HeadKind::Transformer]
            .into_iter()
            .enumerate()
        {
            let cfg = HeadConfig {
                heads: 2,
                mode: AttentionMode::Equation,
                residual: false,
                ..HeadConfig::new(kind, 4, 2)
            };
            let head = init_head(&cfg, &mut Rng::new(11)).unwrap();
            let name = format!("h{i}");
            save_checkpoint(&head, dir.path(), &name).unwrap();
            let text =
                std::fs::read_to_string(dir.path().join(format!("{name}.manifest"))).unwrap();
            assert!(text.starts_with(&format!(
                "kind={}\ndims=4,8\ndepth=2\nheads=2\nseed=11\n",
                kind.name()
            )));
            assert_eq!(load_checkpoint(dir.path(), &name).unwrap(), head);
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!("kind=ffn\ndims=4,8\ndepth=1\ncolor=red\n"
            .parse::<Manifest>()
            .is_err());
        assert!("dims=4,8\ndepth=1\n".parse::<Manifest>().is_err());
    }
}
