//! Corpus builder: deterministic split assembly into the on-disk dataset.

use std::collections::BTreeMap;
use std::path::Path;

use super::scene::generate_scene;
use super::{mix_seed, Layout, ScenarioConfig};
use crate::error::{Error, Result};
use crate::scene::io::{DatasetManifest, DatasetWriter, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy)]
pub struct CorpusSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        // Desk-scale defaults.
        CorpusSizes {
            train: 20_000,
            val: 2_000,
            test: 2_000,
        }
    }
}

const SPLITS: [(&str, u64); 3] = [("train", 0), ("val", 1), ("test", 2)];
const MAX_REGEN: u64 = 32;

/// Deterministic layout sequence honoring the weights: sample `i` takes the
/// layout with the largest weighted deficit, so a 0.5/0.5 mix over 1000
/// samples yields exactly 500/500.
pub fn layout_sequence(mix: &[(Layout, f64)], n: usize) -> Vec<Layout> {
    let total: f64 = mix.iter().map(|(_, w)| w.max(0.0)).sum();
    assert!(total > 0.0, "layout mix must have positive weight");
    let mut counts = vec![0u64; mix.len()];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = (0..mix.len())
            .max_by(|&a, &b| {
                let da = mix[a].1.max(0.0) / total * (i + 1) as f64 - counts[a] as f64;
                let db = mix[b].1.max(0.0) / total * (i + 1) as f64 - counts[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        counts[k] += 1;
        out.push(mix[k].0);
    }
    out
}

/// Build train/val/test splits under `out_dir` with disjoint per-sample seeds
/// and write the manifest. Returns the manifest.
pub fn build_corpus(
    base: &ScenarioConfig,
    layout_mix: &[(Layout, f64)],
    sizes: CorpusSizes,
    out_dir: &Path,
    config_hash: &str,
) -> Result<DatasetManifest> {
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::Config("split sizes must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut layout_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut rejected: BTreeMap<String, u64> = BTreeMap::new();
    let mut splits: BTreeMap<String, u64> = BTreeMap::new();
    let mut truncated_agents = 0u64;
    let mut truncated_lanes = 0u64;

    for (split, split_id) in SPLITS {
        let n = match split {
            "train" => sizes.train,
            "val" => sizes.val,
            _ => sizes.test,
        };
        let layouts = layout_sequence(layout_mix, n);
        let path = out_dir.join(format!("{split}.bin"));
        let mut writer = DatasetWriter::create(&path, base.dims)?;
        let mut split_rejected = 0u64;
        for (i, layout) in layouts.iter().enumerate() {
            let mut attempt = 0u64;
            loop {
                let mut cfg = base.clone();
                cfg.layout = *layout;
                cfg.seed = mix_seed(base.seed, split_id * 0x10_0000 + i as u64, attempt);
                match generate_scene(&cfg) {
                    Ok((scene, stats)) => {
                        writer.write_scene(&scene)?;
                        truncated_agents += stats.truncated_agents;
                        truncated_lanes += stats.truncated_lanes;
                        *layout_counts.entry(layout.name().to_string()).or_insert(0) += 1;
                        break;
                    }
                    Err(Error::RouteDerivation(msg)) => {
                        split_rejected += 1;
                        attempt += 1;
                        if attempt >= MAX_REGEN {
                            return Err(Error::RouteDerivation(format!(
                                "{split} sample {i}: {MAX_REGEN} consecutive failures ({msg})"
                            )));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let written = writer.finalize()?;
        splits.insert(split.to_string(), written);
        rejected.insert(split.to_string(), split_rejected);
    }

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        dims: base.dims,
        splits,
        layout_counts,
        rejected,
        truncated_agents,
        truncated_lanes,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::io::DatasetReader;

    fn tiny_config() -> ScenarioConfig {
        ScenarioConfig {
            seed: 42,
            n_agents: 4,
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn layout_sequence_deterministic_counts() {
        let mix = [(Layout::Straight, 0.5), (Layout::Crossroad, 0.5)];
        let seq = layout_sequence(&mix, 1000);
        let s = seq.iter().filter(|l| **l == Layout::Straight).count();
        assert_eq!(s, 500);
    }

    #[test]
    fn small_corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let sizes = CorpusSizes {
            train: 4,
            val: 2,
            test: 2,
        };
        let mix = [(Layout::Straight, 0.5), (Layout::Curve, 0.5)];
        let m = build_corpus(&tiny_config(), &mix, sizes, dir.path(), "deadbeef").unwrap();
        assert_eq!(m.splits["train"], 4);
        assert_eq!(m.splits["val"], 2);
        assert_eq!(m.splits["test"], 2);
        let r = DatasetReader::open(&dir.path().join("train.bin")).unwrap();
        assert_eq!(r.len(), 4);
        r.get(3).unwrap().validate(r.dims()).unwrap();
        let loaded = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(loaded.config_hash, "deadbeef");
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let sizes = CorpusSizes {
            train: 3,
            val: 1,
            test: 1,
        };
        let mix = [(Layout::TJunction, 1.0)];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        build_corpus(&tiny_config(), &mix, sizes, d1.path(), "h").unwrap();
        build_corpus(&tiny_config(), &mix, sizes, d2.path(), "h").unwrap();
        for f in ["train.bin", "val.bin", "test.bin"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
    }
}
