//! Versioned JSON checkpoints. Every floating-point array is stored as the
//! base64 of its little-endian bit patterns, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2, ArrayD, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Gradients, Sgd, TrainState};
use crate::assigner::AnchorCache;
use crate::backbone::{Conv2d, ConvGrads, Estimator, Extractor, Model};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{DomainClassifier, DomainClassifierGrads};
use crate::par::Exec;

pub const CHECKPOINT_FORMAT: &str = "dawsol-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tensor {
    dtype: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    /// The run configuration in `key = value` form.
    config: String,
    step: u64,
    epoch: u64,
    seen_count: Vec<u64>,
    universum_updates: u64,
    initialized: Vec<bool>,
    tensors: BTreeMap<String, Tensor>,
}

fn put_f32<D: Dimension>(t: &mut BTreeMap<String, Tensor>, name: String, a: &ndarray::Array<f32, D>) {
    let bytes: Vec<u8> = a.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
    t.insert(
        name,
        Tensor {
            dtype: "f32".into(),
            shape: a.shape().to_vec(),
            data: STANDARD.encode(bytes),
        },
    );
}

fn put_f64<D: Dimension>(t: &mut BTreeMap<String, Tensor>, name: String, a: &ndarray::Array<f64, D>) {
    let bytes: Vec<u8> = a.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
    t.insert(
        name,
        Tensor {
            dtype: "f64".into(),
            shape: a.shape().to_vec(),
            data: STANDARD.encode(bytes),
        },
    );
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader {
    tensors: BTreeMap<String, Tensor>,
}

impl Reader {
    fn raw(&self, name: &str, dtype: &str, width: usize) -> Result<(Vec<usize>, Vec<u8>)> {
        let t = self.tensors.get(name).ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if t.dtype != dtype {
            return Err(corrupt(format!("tensor {name} is {}, expected {dtype}", t.dtype)));
        }
        let bytes = STANDARD
            .decode(&t.data)
            .map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
        if bytes.len() != t.shape.iter().product::<usize>() * width {
            return Err(corrupt(format!("tensor {name} has the wrong length")));
        }
        Ok((t.shape.clone(), bytes))
    }

    fn f32<D: Dimension>(&self, name: &str) -> Result<ndarray::Array<f32, D>> {
        let (shape, bytes) = self.raw(name, "f32", 4)?;
        let v = bytes
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        dyn_into(name, ArrayD::from_shape_vec(IxDyn(&shape), v))
    }

    fn f64<D: Dimension>(&self, name: &str) -> Result<ndarray::Array<f64, D>> {
        let (shape, bytes) = self.raw(name, "f64", 8)?;
        let v = bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        dyn_into(name, ArrayD::from_shape_vec(IxDyn(&shape), v))
    }
}

fn dyn_into<T, D: Dimension>(
    name: &str,
    a: std::result::Result<ArrayD<T>, ndarray::ShapeError>,
) -> Result<ndarray::Array<T, D>> {
    a.and_then(|a| a.into_dimensionality::<D>())
        .map_err(|e| corrupt(format!("tensor {name}: {e}")))
}

fn put_grads(t: &mut BTreeMap<String, Tensor>, prefix: &str, g: &Gradients) {
    for (i, c) in g.conv.iter().enumerate() {
        put_f32(t, format!("{prefix}conv{i}.weight"), &c.weight);
        put_f32(t, format!("{prefix}conv{i}.bias"), &c.bias);
    }
    put_f64(t, format!("{prefix}estimator.weight"), &g.estimator_weight);
    put_f64(t, format!("{prefix}estimator.bias"), &g.estimator_bias);
    if let Some(d) = &g.domain {
        put_domain(t, prefix, &d.w1, &d.b1, &d.w2, d.b2);
    }
}

fn put_domain(t: &mut BTreeMap<String, Tensor>, prefix: &str, w1: &Array2<f64>, b1: &Array1<f64>, w2: &Array1<f64>, b2: f64) {
    put_f64(t, format!("{prefix}domain.w1"), w1);
    put_f64(t, format!("{prefix}domain.b1"), b1);
    put_f64(t, format!("{prefix}domain.w2"), w2);
    put_f64(t, format!("{prefix}domain.b2"), &Array1::from(vec![b2]));
}

/// Write the full training state: model, anchor cache, domain classifier,
/// momentum buffers and counters.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut t = BTreeMap::new();
    for (i, l) in state.model.extractor.layers.iter().enumerate() {
        put_f32(&mut t, format!("conv{i}.weight"), &l.weight);
        put_f32(&mut t, format!("conv{i}.bias"), &l.bias);
    }
    put_f64(&mut t, "estimator.weight".into(), &state.model.estimator.weight);
    put_f64(&mut t, "estimator.bias".into(), &state.model.estimator.bias);
    put_f64(&mut t, "cache.m".into(), &state.cache.m);
    put_f64(&mut t, "cache.epsilon_scale".into(), &Array1::from(vec![state.cache.epsilon_scale]));
    if let Some(d) = &state.domain_classifier {
        put_domain(&mut t, "", &d.w1, &d.b1, &d.w2, d.b2);
    }
    put_grads(&mut t, "momentum.", &state.optimizer.velocity);
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: state.config.to_config_string(),
        step: state.step,
        epoch: state.epoch,
        seen_count: state.cache.seen_count.clone(),
        universum_updates: state.cache.universum_updates,
        initialized: state.cache.initialized.clone(),
        tensors: t,
    };
    let text = serde_json::to_string(&file).map_err(|e| corrupt(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_grads(r: &Reader, prefix: &str, layers: usize, domain: bool) -> Result<Gradients> {
    let conv = (0..layers)
        .map(|i| {
            Ok(ConvGrads {
                weight: r.f32(&format!("{prefix}conv{i}.weight"))?,
                bias: r.f32(&format!("{prefix}conv{i}.bias"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let domain = if domain {
        let (w1, b1, w2, b2) = read_domain(r, prefix)?;
        Some(DomainClassifierGrads { w1, b1, w2, b2 })
    } else {
        None
    };
    Ok(Gradients {
        conv,
        estimator_weight: r.f64(&format!("{prefix}estimator.weight"))?,
        estimator_bias: r.f64(&format!("{prefix}estimator.bias"))?,
        domain,
    })
}

fn same_shapes(a: &Gradients, b: &Gradients) -> bool {
    a.conv.len() == b.conv.len()
        && a.conv
            .iter()
            .zip(&b.conv)
            .all(|(x, y)| x.weight.dim() == y.weight.dim() && x.bias.dim() == y.bias.dim())
        && a.estimator_weight.dim() == b.estimator_weight.dim()
        && a.estimator_bias.dim() == b.estimator_bias.dim()
        && match (&a.domain, &b.domain) {
            (Some(x), Some(y)) => x.w1.dim() == y.w1.dim() && x.b1.dim() == y.b1.dim() && x.w2.dim() == y.w2.dim(),
            (None, None) => true,
            _ => false,
        }
}

type DomainParts = (Array2<f64>, Array1<f64>, Array1<f64>, f64);

fn read_domain(r: &Reader, prefix: &str) -> Result<DomainParts> {
    let b2: Array1<f64> = r.f64(&format!("{prefix}domain.b2"))?;
    let b2 = *b2.first().ok_or_else(|| corrupt("empty domain.b2"))?;
    Ok((
        r.f64(&format!("{prefix}domain.w1"))?,
        r.f64(&format!("{prefix}domain.b1"))?,
        r.f64(&format!("{prefix}domain.w2"))?,
        b2,
    ))
}

/// Read a checkpoint written by [`save_checkpoint`]. Any inconsistency is an
/// error; nothing is returned half-built.
pub fn load_checkpoint(path: &Path, exec: Exec) -> Result<TrainState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(corrupt(format!("{} is not a checkpoint", path.display())));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    let config = RunConfig::parse_str(&file.config)?;
    config.validate()?;
    let r = Reader { tensors: file.tensors };

    let plan = crate::backbone::stage_plan(config.base_width, config.feature_dim);
    let mut layers = Vec::with_capacity(plan.len());
    for (i, &(in_ch, out_ch, stride)) in plan.iter().enumerate() {
        let weight: Array2<f32> = r.f32(&format!("conv{i}.weight"))?;
        let bias: Array1<f32> = r.f32(&format!("conv{i}.bias"))?;
        if weight.dim() != (out_ch, in_ch * 9) || bias.len() != out_ch {
            return Err(corrupt(format!("conv{i} has the wrong shape")));
        }
        layers.push(Conv2d {
            in_ch,
            out_ch,
            stride,
            weight,
            bias,
        });
    }
    let estimator = Estimator {
        weight: r.f64("estimator.weight")?,
        bias: r.f64("estimator.bias")?,
    };
    if estimator.weight.dim() != (config.num_classes, config.feature_dim) || estimator.bias.len() != config.num_classes {
        return Err(corrupt("estimator has the wrong shape"));
    }
    let model = Model {
        extractor: Extractor { layers },
        estimator,
        image_size: config.image_size,
    };

    let eps: Array1<f64> = r.f64("cache.epsilon_scale")?;
    let cache = AnchorCache {
        m: r.f64("cache.m")?,
        seen_count: file.seen_count,
        universum_updates: file.universum_updates,
        initialized: file.initialized,
        epsilon_scale: *eps.first().ok_or_else(|| corrupt("empty cache.epsilon_scale"))?,
    };
    let k = config.num_classes;
    if cache.m.dim() != (config.feature_dim, k + 1) || cache.seen_count.len() != k || cache.initialized.len() != k {
        return Err(corrupt("anchor cache does not match the configuration"));
    }

    let has_domain = r.tensors.contains_key("domain.w1");
    let domain_classifier = if has_domain {
        let (w1, b1, w2, b2) = read_domain(&r, "")?;
        let c = config.feature_dim;
        if w1.dim() != (c, c) || b1.len() != c || w2.len() != c {
            return Err(corrupt("domain classifier has the wrong shape"));
        }
        Some(DomainClassifier { w1, b1, w2, b2 })
    } else {
        None
    };
    let velocity = read_grads(&r, "momentum.", plan.len(), has_domain)?;
    if !same_shapes(&velocity, &Gradients::zeros(&model, domain_classifier.as_ref())) {
        return Err(corrupt("momentum buffers do not match the model"));
    }
    let optimizer = Sgd {
        momentum: config.momentum,
        weight_decay: config.weight_decay,
        velocity,
    };
    Ok(TrainState {
        model,
        cache,
        domain_classifier,
        optimizer,
        step: file.step,
        epoch: file.epoch,
        config,
        exec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::UdaMethod;
    use crate::data::{render_sample, SyntheticSpec, TrainingSet};
    use crate::annotation::ClassMask;
    use crate::rng::seeded_rng;
    use crate::trainer::train;

    fn trained(uda: UdaMethod) -> TrainState {
        let cfg = RunConfig {
            image_size: 32,
            feature_dim: 8,
            base_width: 4,
            samples_per_subset: 2,
            batch_size: 4,
            epochs: 1,
            uda_method: uda,
            ..RunConfig::default()
        };
        let spec = SyntheticSpec { image_size: 32, ..SyntheticSpec::default() };
        let mut rng = seeded_rng(1);
        let mut set = TrainingSet { ids: vec![], images: vec![], masks: vec![] };
        for i in 0..8 {
            let s = render_sample(&spec, &mut rng);
            set.ids.push(i.to_string());
            set.images.push(s.image);
            set.masks.push(ClassMask::one_hot(s.class, 3).unwrap());
        }
        train(cfg, &set, Exec::Sequential, &mut |_| {}).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let tmp = tempfile::tempdir().unwrap();
        for uda in [UdaMethod::Mmd, UdaMethod::Dann] {
            let state = trained(uda);
            assert!(state.cache.seen_count.iter().sum::<u64>() > 0);
            let path = tmp.path().join("ck.json");
            save_checkpoint(&state, &path).unwrap();
            let back = load_checkpoint(&path, Exec::Sequential).unwrap();
            assert_eq!(back, state);
            assert_eq!(back.domain_classifier.is_some(), uda == UdaMethod::Dann);
        }
    }

    #[test]
    fn corrupt_and_mismatched_files_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ck.json");
        save_checkpoint(&trained(UdaMethod::Mmd), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        let bad = tmp.path().join("bad.json");
        fs::write(&bad, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&bad, Exec::Sequential), Err(Error::Checkpoint(_))));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
        fs::write(&bad, v.to_string()).unwrap();
        let err = load_checkpoint(&bad, Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)) && err.to_string().contains("version"));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["tensors"].as_object_mut().unwrap().remove("cache.m");
        fs::write(&bad, v.to_string()).unwrap();
        assert!(load_checkpoint(&bad, Exec::Sequential).is_err());

        assert!(load_checkpoint(&tmp.path().join("missing.json"), Exec::Sequential).is_err());
    }
}
