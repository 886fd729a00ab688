//! The training loop: forward, target sample assignment, losses, one SGD
//! update, then the anchor cache update. Also evaluation of a trained model.

mod checkpoint;
mod optim;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::{Gradients, Sgd};

use crate::annotation::ClassMask;
use crate::assigner::{sample_subsets, sample_uniform, AnchorCache, KMeansParams, UpdateRule};
use crate::backbone::{aggregate, argmax, Model, PixelFeatureMap, SourceFeature};
use crate::config::{Augmentation, RunConfig, UdaMethod};
use crate::data::{cutmix_augment, has_augment, to_tensor, EvalSet, TrainingSet};
use crate::error::{Error, Result};
use crate::losses::{dal_loss, soft_cross_entropy, DalOptions, DomainClassifier, LossBreakdown};
use crate::metrics::{evaluate_records, EvalRecord, MetricCurves, MetricSummary, ThresholdSweep};
use crate::par::{self, Exec};
use crate::rng::{seeded_rng, step_rng, stream_rng, streams};

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub cache: AnchorCache,
    /// Present when the adaptation loss is adversarial.
    pub domain_classifier: Option<DomainClassifier>,
    pub optimizer: Sgd,
    /// Completed optimizer steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub config: RunConfig,
    pub exec: Exec,
}

/// One mini-batch: images with soft labels and the class mask used for anchors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<Array3<f32>>,
    /// Label weights per image, summing to one.
    pub targets: Vec<Vec<f64>>,
    pub masks: Vec<ClassMask>,
}

impl Batch {
    /// Unmixed images with one-hot labels.
    pub fn from_masks(images: Vec<Array3<f32>>, masks: Vec<ClassMask>) -> Batch {
        let targets = masks.iter().map(|m| m.y().iter().map(|&v| v as f64).collect()).collect();
        Batch { images, targets, masks }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub l_u: f64,
    pub total: f64,
}

/// Per-image assigner output waiting to be folded into the cache.
#[derive(Debug, Clone)]
pub struct CacheUpdate {
    pub centers: Array2<f64>,
    pub z: SourceFeature,
    pub mask: ClassMask,
}

/// Loss and gradients of one batch, before any state is changed except
/// first-time anchor seeding.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub loss: LossBreakdown,
    pub gradients: Gradients,
    pub cache_updates: Vec<CacheUpdate>,
    /// Sampled target subsets per image `[universum, true, fake]`, empty without the assigner.
    pub subset_sizes: Vec<[usize; 3]>,
}

impl TrainState {
    pub fn new(config: RunConfig, exec: Exec) -> Result<TrainState> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, streams::INIT);
        let model = Model::new(&config, &mut rng);
        let domain_classifier =
            (config.uda_method == UdaMethod::Dann).then(|| DomainClassifier::new(config.feature_dim, &mut rng));
        let optimizer = Sgd::new(&model, domain_classifier.as_ref(), config.momentum, config.weight_decay);
        Ok(TrainState {
            cache: AnchorCache::new(config.feature_dim, config.num_classes, config.epsilon_scale),
            model,
            domain_classifier,
            optimizer,
            step: 0,
            epoch: 0,
            config,
            exec,
        })
    }

    /// Step-decayed learning rate for the current epoch.
    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        if c.lr_decay_every == 0 {
            c.learning_rate
        } else {
            c.learning_rate * c.lr_decay_factor.powi((self.epoch / c.lr_decay_every as u64) as i32)
        }
    }

    fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            max_iters: self.config.kmeans_max_iters,
            tol: self.config.kmeans_tol,
        }
    }
}

/// Sampled vectors of a whole batch, one per row, with the image and
/// spatial position each row came from.
struct Pooled {
    rows: Array2<f64>,
    owner: Vec<(usize, usize)>,
}

fn pool(parts: &[(usize, Vec<usize>, Array2<f64>)], channels: usize) -> Pooled {
    let total: usize = parts.iter().map(|p| p.1.len()).sum();
    let mut rows = Array2::zeros((total, channels));
    let mut owner = Vec::with_capacity(total);
    let mut r = 0;
    for (b, idx, v) in parts {
        for (j, &pos) in idx.iter().enumerate() {
            rows.row_mut(r).assign(&v.row(j));
            owner.push((*b, pos));
            r += 1;
        }
    }
    Pooled { rows, owner }
}

fn scatter(dz: &mut [Array2<f64>], pooled: &Pooled, grad: &Array2<f64>, weight: f64) {
    if weight == 0.0 {
        return;
    }
    for (r, &(b, pos)) in pooled.owner.iter().enumerate() {
        let mut col = dz[b].column_mut(pos);
        col.scaled_add(weight, &grad.row(r));
    }
}

/// Forward and backward for one batch. Clustering sees the features as
/// constants; only the sampled vectors carry gradient back to the extractor.
pub fn compute_gradients(state: &mut TrainState, batch: &Batch) -> Result<StepGradients> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let cfg = state.config.clone();
    let exec = state.exec;
    for im in &batch.images {
        state.model.check_image(im.view())?;
    }
    let b = batch.len();
    let c = state.model.feature_dim();
    let model = &state.model;
    let forward = par::map(exec, &batch.images, |im| model.extractor.forward_trace(im.view()));
    let maps: Vec<&PixelFeatureMap> = forward.iter().map(|f| &f.0).collect();
    let zs: Vec<SourceFeature> = maps.iter().map(|m| aggregate(m)).collect();
    let mut zbar = Array2::zeros((c, b));
    for (i, z) in zs.iter().enumerate() {
        zbar.column_mut(i).assign(&z.0);
    }

    let logits = model.estimator.estimate(zbar.view())?;
    let mut targets = Array2::zeros((cfg.num_classes, b));
    for (i, t) in batch.targets.iter().enumerate() {
        if t.len() != cfg.num_classes {
            return Err(Error::Input(format!("label has {} entries, expected {}", t.len(), cfg.num_classes)));
        }
        targets.column_mut(i).assign(&Array1::from(t.clone()));
    }
    let (l_c, dlogits) = soft_cross_entropy(logits.view(), targets.view());

    // target subsets
    let mut rng = step_rng(cfg.seed, streams::ASSIGNER, state.step);
    let n = cfg.samples_per_subset;
    let mut cache_updates = Vec::new();
    let mut subset_sizes = Vec::new();
    let (mut univ, mut truth, mut fake) = (Vec::new(), Vec::new(), Vec::new());
    let dal_active = state.epoch >= cfg.warmup_epochs as u64;
    if dal_active && cfg.tsa {
        let mut anchors = Vec::with_capacity(b);
        for i in 0..b {
            anchors.push(state.cache.get_anchors(&batch.masks[i], &zs[i], &mut rng)?);
        }
        let seeds: Vec<u64> = (0..b).map(|_| rng.random()).collect();
        let params = state.kmeans_params();
        let samples = par::map_range(exec, b, |i| {
            let (au, at) = &anchors[i];
            sample_subsets(maps[i], (au.view(), at.view()), &zs[i], n, params, &mut seeded_rng(seeds[i]))
        });
        for (i, s) in samples.into_iter().enumerate() {
            let s = s?;
            subset_sizes.push([s.indices[0].len(), s.indices[1].len(), s.indices[2].len()]);
            let [iu, it, ifk] = s.indices;
            let [vu, vt, vf] = s.vectors;
            univ.push((i, iu, vu));
            truth.push((i, it, vt));
            fake.push((i, ifk, vf));
            cache_updates.push(CacheUpdate {
                centers: s.centers,
                z: zs[i].clone(),
                mask: batch.masks[i].clone(),
            });
        }
    } else if dal_active && cfg.uda_method != UdaMethod::None {
        for (i, m) in maps.iter().enumerate() {
            let (idx, rows) = sample_uniform(m, n, &mut rng);
            truth.push((i, idx, rows));
        }
    }
    let (univ, truth, fake) = (pool(&univ, c), pool(&truth, c), pool(&fake, c));

    let opts = DalOptions::from_config(&cfg);
    let source = zbar.t();
    let terms = dal_loss(
        source.view(),
        fake.rows.view(),
        truth.rows.view(),
        univ.rows.view(),
        &opts,
        state.domain_classifier.as_ref(),
    );
    let loss = LossBreakdown::compose(l_c, terms.l_d, terms.l_u, cfg.lambda1, cfg.lambda2);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            l_c: loss.l_c,
            l_d: loss.l_d,
            l_u: loss.l_u,
        });
    }

    // dL/dZ per image
    let dz_source = {
        let mut g = model.estimator.weight.t().dot(&dlogits);
        g.scaled_add(cfg.lambda1, &terms.grad_source.t());
        g
    };
    let mut dz: Vec<Array2<f64>> = maps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let per_pos = dz_source.column(i).mapv(|v| v / m.positions() as f64);
            let mut g = Array2::zeros(m.z.raw_dim());
            for mut col in g.axis_iter_mut(Axis(1)) {
                col.assign(&per_pos);
            }
            g
        })
        .collect();
    scatter(&mut dz, &fake, &terms.grad_fake, cfg.lambda1);
    scatter(&mut dz, &truth, &terms.grad_true, cfg.lambda1);
    scatter(&mut dz, &univ, &terms.grad_universum, cfg.lambda2);

    let per_image = par::map_range(exec, b, |i| model.extractor.backward(&forward[i].1, dz[i].view()));
    let mut gradients = Gradients::zeros(model, state.domain_classifier.as_ref());
    for grads in per_image {
        for (acc, g) in gradients.conv.iter_mut().zip(grads) {
            acc.weight += &g.weight;
            acc.bias += &g.bias;
        }
    }
    gradients.estimator_weight = dlogits.dot(&zbar.t());
    gradients.estimator_bias = dlogits.sum_axis(Axis(1));
    if let (Some(acc), Some(g)) = (gradients.domain.as_mut(), terms.classifier) {
        acc.w1 = g.w1 * cfg.lambda1;
        acc.b1 = g.b1 * cfg.lambda1;
        acc.w2 = g.w2 * cfg.lambda1;
        acc.b2 = g.b2 * cfg.lambda1;
    }
    Ok(StepGradients {
        loss,
        gradients,
        cache_updates,
        subset_sizes,
    })
}

/// One optimizer update on the batch total, followed by the cache update in
/// batch order using the cluster centres of this forward pass.
pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<LossBreakdown> {
    let step = compute_gradients(state, batch)?;
    let lr = state.learning_rate();
    state
        .optimizer
        .step(&mut state.model, state.domain_classifier.as_mut(), &step.gradients, lr);
    let rule = UpdateRule::from_literal_flag(state.config.eq7_literal);
    for u in &step.cache_updates {
        state.cache.update(u.centers.view(), &u.z, &u.mask, rule)?;
    }
    state.step += 1;
    Ok(step.loss)
}

fn one_hot(mask: &ClassMask) -> Vec<f64> {
    mask.y().iter().map(|&v| v as f64).collect()
}

/// Assemble the batch for `indices`, applying the configured augmentation.
pub fn make_batch<R: Rng>(cfg: &RunConfig, set: &TrainingSet, indices: &[usize], rng: &mut R) -> Result<Batch> {
    let mut batch = Batch {
        images: Vec::with_capacity(indices.len()),
        targets: Vec::with_capacity(indices.len()),
        masks: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        let mut image = to_tensor(&set.images[i]);
        let mut target = one_hot(&set.masks[i]);
        let mut mask = set.masks[i].clone();
        match cfg.augmentation {
            Augmentation::None => {}
            Augmentation::Has => has_augment(&mut image, cfg.has_grid, cfg.has_prob, rng),
            Augmentation::Cutmix => {
                let j = rng.random_range(0..set.len());
                let other = to_tensor(&set.images[j]);
                let mixed = cutmix_augment(&image, &target, &other, &one_hot(&set.masks[j]), cfg.cutmix_alpha, rng);
                let dominant = argmax(Array1::from(mixed.label.clone()).view());
                image = mixed.image;
                target = mixed.label;
                mask = ClassMask::one_hot(dominant, cfg.num_classes)?;
            }
        }
        batch.images.push(image);
        batch.targets.push(target);
        batch.masks.push(mask);
    }
    Ok(batch)
}

/// One pass over the training set in a seeded shuffled order.
pub fn train_epoch(state: &mut TrainState, set: &TrainingSet, on_step: &mut dyn FnMut(&LogRecord)) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let cfg = state.config.clone();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut step_rng(cfg.seed, streams::SHUFFLE, state.epoch));
    for chunk in order.chunks(cfg.batch_size) {
        let mut aug = step_rng(cfg.seed, streams::AUGMENT, state.step);
        let batch = make_batch(&cfg, set, chunk, &mut aug)?;
        let lr = state.learning_rate();
        let loss = train_step(state, &batch)?;
        on_step(&LogRecord {
            step: state.step,
            epoch: state.epoch,
            lr,
            l_c: loss.l_c,
            l_d: loss.l_d,
            l_u: loss.l_u,
            total: loss.total,
        });
    }
    state.epoch += 1;
    log::info!("epoch {} done after {} steps", state.epoch, state.step);
    Ok(())
}

/// Train from scratch for `config.epochs` epochs.
pub fn train(config: RunConfig, set: &TrainingSet, exec: Exec, on_step: &mut dyn FnMut(&LogRecord)) -> Result<TrainState> {
    let mut state = TrainState::new(config, exec)?;
    resume(&mut state, set, on_step)?;
    Ok(state)
}

/// Continue training until `config.epochs` epochs are complete.
pub fn resume(state: &mut TrainState, set: &TrainingSet, on_step: &mut dyn FnMut(&LogRecord)) -> Result<()> {
    while state.epoch < state.config.epochs as u64 {
        train_epoch(state, set, on_step)?;
    }
    Ok(())
}

/// Ground-truth-class localization maps and predictions for every sample.
pub fn eval_records(model: &Model, set: &EvalSet, exec: Exec) -> Result<Vec<EvalRecord>> {
    par::map(exec, &set.samples, |s| {
        let image = to_tensor(&s.image);
        let inf = model.infer(image.view())?;
        let (_, h, w) = image.dim();
        let gt_class = s.mask.dominant_class();
        Ok(EvalRecord {
            id: s.id.clone(),
            map: inf.scores.class_map(gt_class, h, w),
            predicted_class: inf.predicted_class(),
            gt_class,
            annotation: s.annotation.clone(),
        })
    })
    .into_iter()
    .collect()
}

/// Every metric the evaluation annotations support.
pub fn evaluate(state: &TrainState, set: &EvalSet) -> Result<(MetricSummary, MetricCurves)> {
    let records = eval_records(&state.model, set, state.exec)?;
    evaluate_records(&records, &ThresholdSweep::uniform(state.config.thresholds), state.exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{ClassBox, ClassPixelMask, PixelAnnotation};
    use crate::data::{render_sample, EvalSample, SyntheticSpec};
    use crate::metrics::mask_to_box;

    fn spec(size: usize, classes: usize) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: classes,
            image_size: size,
            ..SyntheticSpec::default()
        }
    }

    fn small_config() -> RunConfig {
        RunConfig {
            image_size: 32,
            feature_dim: 8,
            base_width: 4,
            samples_per_subset: 2,
            batch_size: 4,
            epochs: 1,
            ..RunConfig::default()
        }
    }

    fn train_set(n: usize, size: usize, classes: usize, seed: u64) -> TrainingSet {
        let mut rng = seeded_rng(seed);
        let s = spec(size, classes);
        let mut set = TrainingSet { ids: vec![], images: vec![], masks: vec![] };
        for i in 0..n {
            let smp = render_sample(&s, &mut rng);
            set.ids.push(format!("{i:05}"));
            set.images.push(smp.image);
            set.masks.push(ClassMask::one_hot(smp.class, classes).unwrap());
        }
        set
    }

    fn eval_set(n: usize, size: usize, seed: u64) -> EvalSet {
        let mut rng = seeded_rng(seed);
        let s = spec(size, 3);
        let samples = (0..n)
            .map(|i| {
                let smp = render_sample(&s, &mut rng);
                let b = mask_to_box(smp.mask.view()).unwrap().to_bbox();
                EvalSample {
                    id: format!("{i:05}"),
                    image: smp.image,
                    mask: ClassMask::one_hot(smp.class, 3).unwrap(),
                    annotation: PixelAnnotation {
                        boxes: vec![ClassBox { class: smp.class, bbox: b }],
                        masks: vec![ClassPixelMask { class: smp.class, mask: smp.mask }],
                    },
                }
            })
            .collect();
        EvalSet { samples }
    }

    fn first_batch(cfg: &RunConfig, set: &TrainingSet) -> Batch {
        let idx: Vec<usize> = (0..cfg.batch_size).collect();
        make_batch(cfg, set, &idx, &mut seeded_rng(0)).unwrap()
    }

    #[test]
    fn zero_weights_equal_plain_cam_training() {
        let set = train_set(8, 32, 3, 1);
        let plain = RunConfig { lambda1: 0.0, lambda2: 0.0, tsa: false, uda_method: UdaMethod::None, ..small_config() };
        let weighted_off = RunConfig { lambda1: 0.0, lambda2: 0.0, ..small_config() };
        let (mut a, mut b) = (TrainState::new(plain.clone(), Exec::Sequential).unwrap(), TrainState::new(weighted_off, Exec::Sequential).unwrap());
        for step in 0..2 {
            let idx: Vec<usize> = (step * 4..step * 4 + 4).collect();
            let batch = make_batch(&plain, &set, &idx, &mut seeded_rng(0)).unwrap();
            let la = train_step(&mut a, &batch).unwrap();
            let lb = train_step(&mut b, &batch).unwrap();
            assert_eq!(la.total, lb.total);
            assert_eq!(la.total, la.l_c);
        }
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn loss_drops_on_separable_pair() {
        let cfg = RunConfig { num_classes: 2, ..small_config() };
        // class 0 dark, class 1 bright
        let mut rng = seeded_rng(2);
        let mut set = TrainingSet { ids: vec![], images: vec![], masks: vec![] };
        for i in 0..16 {
            let class = i % 2;
            let base = if class == 0 { 40.0 } else { 200.0 };
            let im = image::RgbImage::from_fn(32, 32, |_, _| {
                image::Rgb([0; 3].map(|_: u8| (base + rng.random_range(-30.0..30.0f64)) as u8))
            });
            set.ids.push(i.to_string());
            set.images.push(im);
            set.masks.push(ClassMask::one_hot(class, 2).unwrap());
        }
        let mut state = TrainState::new(RunConfig { lambda1: 0.0, lambda2: 0.0, ..cfg.clone() }, Exec::Sequential).unwrap();
        let mut losses = Vec::new();
        for step in 0..50 {
            let idx: Vec<usize> = (0..4).map(|j| (step * 4 + j) % set.len()).collect();
            let batch = make_batch(&cfg, &set, &idx, &mut seeded_rng(0)).unwrap();
            losses.push(train_step(&mut state, &batch).unwrap().l_c);
        }
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn seen_counts_follow_batch_classes() {
        let cfg = small_config();
        let set = train_set(8, 32, 3, 3);
        let mut state = TrainState::new(cfg.clone(), Exec::Sequential).unwrap();
        let batch = first_batch(&cfg, &set);
        train_step(&mut state, &batch).unwrap();
        let mut expected = vec![0u64; 3];
        for m in &batch.masks {
            expected[m.dominant_class()] += 1;
        }
        assert_eq!(state.cache.seen_count, expected);
        assert_eq!(state.cache.universum_updates, 4);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn warmup_skips_assigner() {
        let cfg = RunConfig { warmup_epochs: 1, ..small_config() };
        let set = train_set(4, 32, 3, 3);
        let mut state = TrainState::new(cfg.clone(), Exec::Sequential).unwrap();
        let loss = train_step(&mut state, &first_batch(&cfg, &set)).unwrap();
        assert_eq!((loss.l_d, loss.l_u), (0.0, 0.0));
        assert_eq!(state.cache.universum_updates, 0);
    }

    #[test]
    fn universum_term_reaches_extractor() {
        let cfg = RunConfig { lambda1: 0.0, lambda2: 1.0, ..small_config() };
        let set = train_set(4, 32, 3, 4);
        let batch = first_batch(&cfg, &set);
        let mut on = TrainState::new(cfg.clone(), Exec::Sequential).unwrap();
        let mut off = TrainState::new(RunConfig { lambda2: 0.0, ..cfg }, Exec::Sequential).unwrap();
        let g_on = compute_gradients(&mut on, &batch).unwrap();
        let g_off = compute_gradients(&mut off, &batch).unwrap();
        assert!(g_on.loss.l_u > 0.0);
        let diff: f32 = g_on
            .gradients
            .conv
            .iter()
            .zip(&g_off.gradients.conv)
            .map(|(a, b)| (&a.weight - &b.weight).mapv(f32::abs).sum())
            .sum();
        assert!(diff > 0.0);
        assert!(g_on.gradients.conv.iter().all(|g| g.weight.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let cfg = small_config();
        let set = train_set(8, 32, 3, 5);
        let mut logs = Vec::new();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut log = Vec::new();
            let state = train(cfg.clone(), &set, exec, &mut |r| log.push(*r)).unwrap();
            logs.push((log, state.model));
        }
        assert_eq!(logs[0], logs[1]);
    }

    #[test]
    fn untrained_pxap_near_prevalence() {
        let cfg = RunConfig { image_size: 64, ..RunConfig::default() };
        let state = TrainState::new(cfg, Exec::Parallel).unwrap();
        let set = eval_set(40, 64, 6);
        let fg: usize = set.samples.iter().map(|s| s.annotation.masks[0].mask.iter().filter(|&&b| b).count()).sum();
        let prevalence = 100.0 * fg as f64 / (40.0 * 64.0 * 64.0);
        let (summary, _) = evaluate(&state, &set).unwrap();
        let pxap = summary.pxap.unwrap();
        assert!((pxap - prevalence).abs() <= 10.0, "pxap {pxap} prevalence {prevalence}");
    }

    #[test]
    fn evaluation_repeats_and_respects_annotations() {
        let state = TrainState::new(small_config(), Exec::Parallel).unwrap();
        let mut set = eval_set(6, 32, 7);
        let first = evaluate(&state, &set).unwrap();
        assert_eq!(first, evaluate(&state, &set).unwrap());
        for s in &mut set.samples {
            s.annotation.masks.clear();
        }
        let (boxes_only, _) = evaluate(&state, &set).unwrap();
        assert!(boxes_only.box_acc_v2.is_some() && boxes_only.gt_known.is_some());
        assert!(boxes_only.pxap.is_none() && boxes_only.piou.is_none());
    }

    #[test]
    fn cutmix_mask_follows_mixed_label() {
        let cfg = RunConfig { augmentation: Augmentation::Cutmix, ..small_config() };
        let set = train_set(8, 32, 3, 8);
        let batch = make_batch(&cfg, &set, &[0, 1, 2, 3, 4, 5, 6, 7], &mut seeded_rng(3)).unwrap();
        for (t, m) in batch.targets.iter().zip(&batch.masks) {
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(m.dominant_class(), argmax(Array1::from(t.clone()).view()));
        }
    }
}
