//! The five learned functions behind the planner: probabilistic dynamics
//! ensemble, value ensemble with offline/online losses, safe-set
//! classifier, constraint estimator and goal indicator — plus their
//! offline and online training procedures.

mod classifiers;
mod dynamics;
mod value;

pub use classifiers::{fit_classifiers, safe_set_target, train_safe_set_steps};
pub use dynamics::{dyn_loss_and_grads, mean_endpoint, DynamicsEnsemble};
pub use value::{td_loss_and_grads, value_offline_target, ValueEnsemble};

use crate::config::derive_seed;
use crate::dataset::Dataset;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{load_mlp, save_mlp, Adam, Mlp};
use crate::report::write_atomic;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Standardization statistics computed from the training dataset and
/// stored with the bundle. States and actions are normalized before
/// entering any network; dynamics targets are state deltas normalized by
/// their own spread.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub s_mean: [f64; 2],
    pub s_std: [f64; 2],
    pub a_mean: [f64; 2],
    pub a_std: [f64; 2],
    pub d_mean: [f64; 2],
    pub d_std: [f64; 2],
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn from_dataset(dataset: &Dataset) -> Result<NormStats> {
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut d = Vec::new();
        for ep in &dataset.episodes {
            for tr in &ep.transitions {
                s.push(tr.s);
                a.push(tr.a);
                d.push([tr.s_next[0] - tr.s[0], tr.s_next[1] - tr.s[1]]);
            }
        }
        if s.is_empty() {
            return Err(Error::Refused("cannot normalize an empty dataset".into()));
        }
        let stat = |rows: &[[f64; 2]]| {
            let n = rows.len() as f64;
            let mut mean = [0.0; 2];
            for r in rows {
                mean[0] += r[0];
                mean[1] += r[1];
            }
            mean[0] /= n;
            mean[1] /= n;
            let mut var = [0.0; 2];
            for r in rows {
                var[0] += (r[0] - mean[0]).powi(2);
                var[1] += (r[1] - mean[1]).powi(2);
            }
            let std = [
                (var[0] / n).sqrt().max(STD_FLOOR),
                (var[1] / n).sqrt().max(STD_FLOOR),
            ];
            (mean, std)
        };
        let (s_mean, s_std) = stat(&s);
        let (a_mean, a_std) = stat(&a);
        let (d_mean, d_std) = stat(&d);
        Ok(NormStats { s_mean, s_std, a_mean, a_std, d_mean, d_std })
    }

    pub fn norm_state(&self, s: [f64; 2]) -> [f64; 2] {
        [
            (s[0] - self.s_mean[0]) / self.s_std[0],
            (s[1] - self.s_mean[1]) / self.s_std[1],
        ]
    }

    /// Normalize a batch of raw states into network inputs.
    pub fn norm_states(&self, raw: &Array2<f64>) -> Array2<f64> {
        let mut out = raw.to_owned();
        for mut row in out.rows_mut() {
            row[0] = (row[0] - self.s_mean[0]) / self.s_std[0];
            row[1] = (row[1] - self.s_mean[1]) / self.s_std[1];
        }
        out
    }
}

/// Architecture and training hyperparameters for the offline/online model
/// fits. Defaults are desk-scale; γ and γ_S carry the published values.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub dyn_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub class_hidden: Vec<usize>,
    pub n_dyn: usize,
    pub n_value: usize,
    pub gamma: f64,
    pub gamma_safe: f64,
    pub lr: f64,
    pub batch: usize,
    /// Gradient steps per model during offline training.
    pub offline_steps: usize,
    /// Hard-copy interval for the lagged value target, in gradient steps.
    pub target_sync: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dyn_hidden: vec![32, 32],
            value_hidden: vec![32, 32],
            class_hidden: vec![32, 32],
            n_dyn: 5,
            n_value: 3,
            gamma: 0.99,
            gamma_safe: 0.3,
            lr: 1e-3,
            batch: 256,
            offline_steps: 2000,
            target_sync: 100,
        }
    }
}

/// Dataset flattened into transition-level arrays for minibatch sampling.
pub struct FlatData {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub s_next: Array2<f64>,
    pub r: Array1<f64>,
    pub done: Vec<bool>,
    pub c: Vec<bool>,
    pub in_goal: Vec<bool>,
    /// Episode-level success flag broadcast to each transition.
    pub success: Vec<bool>,
    /// True for transitions usable in value training (goal-reaching demos
    /// and online episodes; constraint demos are excluded).
    pub for_value: Vec<bool>,
}

impl FlatData {
    pub fn from_dataset(dataset: &Dataset) -> FlatData {
        let n = dataset.n_transitions();
        let mut s = Array2::zeros((n, 2));
        let mut a = Array2::zeros((n, 2));
        let mut s_next = Array2::zeros((n, 2));
        let mut r = Array1::zeros(n);
        let mut done = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        let mut in_goal = Vec::with_capacity(n);
        let mut success = Vec::with_capacity(n);
        let mut for_value = Vec::with_capacity(n);
        let mut i = 0;
        for ep in &dataset.episodes {
            let usable = ep.origin != crate::dataset::Origin::OfflineCv;
            for tr in &ep.transitions {
                s[[i, 0]] = tr.s[0];
                s[[i, 1]] = tr.s[1];
                a[[i, 0]] = tr.a[0];
                a[[i, 1]] = tr.a[1];
                s_next[[i, 0]] = tr.s_next[0];
                s_next[[i, 1]] = tr.s_next[1];
                r[i] = tr.r;
                done.push(tr.done);
                c.push(tr.c);
                in_goal.push(tr.r == 0.0);
                success.push(ep.reached_goal);
                for_value.push(usable);
                i += 1;
            }
        }
        FlatData { s, a, s_next, r, done, c, in_goal, success, for_value }
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn gather(&self, arr: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), arr.ncols()));
        for (row, &i) in idx.iter().enumerate() {
            out.row_mut(row).assign(&arr.row(i));
        }
        out
    }
}

pub(crate) fn sample_indices(rng: &mut impl Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

/// The published model set the planner reads: everything it needs to
/// score candidate action sequences.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub dynamics: DynamicsEnsemble,
    pub value: ValueEnsemble,
    pub safe_set: Mlp,
    pub constraint: Mlp,
    pub goal: Mlp,
    pub norm: NormStats,
    pub gamma: f64,
    pub gamma_safe: f64,
    pub config_hash: String,
}

impl ModelBundle {
    fn sigmoid_probs(&self, net: &Mlp, states_raw: &Array2<f64>) -> Array1<f64> {
        let x = self.norm.norm_states(states_raw);
        let p = net.predict(&x).expect("probe states match input width");
        p.column(0).to_owned()
    }

    /// Safe-set membership probability for raw states.
    pub fn safe_prob(&self, states_raw: &Array2<f64>) -> Array1<f64> {
        self.sigmoid_probs(&self.safe_set, states_raw)
    }

    pub fn constraint_prob(&self, states_raw: &Array2<f64>) -> Array1<f64> {
        self.sigmoid_probs(&self.constraint, states_raw)
    }

    pub fn goal_prob(&self, states_raw: &Array2<f64>) -> Array1<f64> {
        self.sigmoid_probs(&self.goal, states_raw)
    }

    /// Ensemble-mean value of raw states.
    pub fn value_mean(&self, states_raw: &Array2<f64>) -> Array1<f64> {
        let x = self.norm.norm_states(states_raw);
        self.value.mean_value(&x)
    }
}

/// Offline training: fit all five models on the dataset. Returns the
/// bundle and per-model loss curves (one entry per gradient step).
pub fn train_offline(
    dataset: &Dataset,
    env: &EnvConfig,
    cfg: &ModelConfig,
    seed: u64,
    config_hash: &str,
) -> Result<(ModelBundle, Vec<(String, Vec<f64>)>)> {
    if dataset.is_empty() {
        return Err(Error::Refused("offline training needs a nonempty dataset".into()));
    }
    if dataset.count(crate::dataset::Origin::OfflineGr) == 0 {
        return Err(Error::Refused(
            "offline training needs goal-reaching demonstrations".into(),
        ));
    }
    let norm = NormStats::from_dataset(dataset)?;
    let flat = FlatData::from_dataset(dataset);

    let mut dynamics = DynamicsEnsemble::new(cfg, &norm, seed);
    let dyn_curve = dynamics.train(&flat, cfg, derive_seed(seed, "dyn-train", 0));

    let mut value = ValueEnsemble::new(cfg, seed);
    let value_curve = value.train_offline(dataset, &norm, cfg, derive_seed(seed, "value-train", 0));

    let mut safe_set = Mlp::new(
        2,
        &cfg.class_hidden,
        1,
        crate::nn::Head::Sigmoid,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "safe-init", 0)),
    );
    let mut safe_adam = Adam::new(&safe_set, cfg.lr);
    let safe_curve = train_safe_set_steps(
        &mut safe_set,
        &mut safe_adam,
        &flat,
        &norm,
        cfg.gamma_safe,
        cfg.offline_steps,
        cfg.batch,
        derive_seed(seed, "safe-train", 0),
    );

    let (constraint, goal, class_curves) =
        fit_classifiers(&flat, &norm, cfg, derive_seed(seed, "class", 0))?;

    let _ = env; // geometry is never consulted during training; models learn from flags only

    let bundle = ModelBundle {
        dynamics,
        value,
        safe_set,
        constraint,
        goal,
        norm,
        gamma: cfg.gamma,
        gamma_safe: cfg.gamma_safe,
        config_hash: config_hash.to_string(),
    };
    let mut curves = vec![
        ("dynamics".to_string(), dyn_curve),
        ("value".to_string(), value_curve),
        ("safe_set".to_string(), safe_curve),
    ];
    curves.extend(class_curves);
    Ok((bundle, curves))
}

/// Persistent optimizer state for online fine-tuning of a bundle.
pub struct BundleTrainer {
    cfg: ModelConfig,
    dyn_adam: Vec<Adam>,
    value_adam: Vec<Adam>,
    safe_adam: Adam,
    constraint_adam: Adam,
    goal_adam: Adam,
    value_steps: usize,
}

impl BundleTrainer {
    pub fn new(bundle: &ModelBundle, cfg: ModelConfig) -> BundleTrainer {
        BundleTrainer {
            dyn_adam: bundle
                .dynamics
                .members
                .members
                .iter()
                .map(|m| Adam::new(m, cfg.lr))
                .collect(),
            value_adam: bundle
                .value
                .members
                .members
                .iter()
                .map(|m| Adam::new(m, cfg.lr))
                .collect(),
            safe_adam: Adam::new(&bundle.safe_set, cfg.lr),
            constraint_adam: Adam::new(&bundle.constraint, cfg.lr),
            goal_adam: Adam::new(&bundle.goal, cfg.lr),
            value_steps: 0,
            cfg,
        }
    }

    /// Fine-tune every model on the grown dataset: `steps` gradient steps
    /// per model. Value updates use the temporal-difference loss with the
    /// lagged target network.
    pub fn update_online(&mut self, bundle: &mut ModelBundle, dataset: &Dataset, steps: usize, seed: u64) {
        let flat = FlatData::from_dataset(dataset);
        if flat.is_empty() {
            return;
        }
        bundle
            .dynamics
            .train_steps(&flat, &mut self.dyn_adam, &self.cfg, steps, derive_seed(seed, "on-dyn", 0));
        self.value_steps = bundle.value.train_online_td(
            &flat,
            &bundle.norm,
            &mut self.value_adam,
            &self.cfg,
            steps,
            self.value_steps,
            derive_seed(seed, "on-value", 0),
        );
        train_safe_set_steps(
            &mut bundle.safe_set,
            &mut self.safe_adam,
            &flat,
            &bundle.norm,
            bundle.gamma_safe,
            steps,
            self.cfg.batch,
            derive_seed(seed, "on-safe", 0),
        );
        classifiers::train_classifier_steps(
            &mut bundle.constraint,
            &mut self.constraint_adam,
            &flat,
            &bundle.norm,
            classifiers::ClassTarget::Constraint,
            steps,
            self.cfg.batch,
            derive_seed(seed, "on-constr", 0),
        );
        classifiers::train_classifier_steps(
            &mut bundle.goal,
            &mut self.goal_adam,
            &flat,
            &bundle.norm,
            classifiers::ClassTarget::Goal,
            steps,
            self.cfg.batch,
            derive_seed(seed, "on-goal", 0),
        );
    }
}

const BUNDLE_MANIFEST: &str = "manifest.txt";

/// Write a bundle as a checkpoint directory: one file per network plus a
/// manifest with the normalization statistics and config hash.
pub fn save_bundle(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("saferl-bundle v1\n");
    manifest.push_str(&format!("config_hash = {}\n", bundle.config_hash));
    manifest.push_str(&format!("gamma = {}\n", bundle.gamma));
    manifest.push_str(&format!("gamma_safe = {}\n", bundle.gamma_safe));
    manifest.push_str(&format!("n_dyn = {}\n", bundle.dynamics.members.len()));
    manifest.push_str(&format!("n_value = {}\n", bundle.value.members.len()));
    let n = &bundle.norm;
    for (key, v) in [
        ("s_mean", n.s_mean),
        ("s_std", n.s_std),
        ("a_mean", n.a_mean),
        ("a_std", n.a_std),
        ("d_mean", n.d_mean),
        ("d_std", n.d_std),
    ] {
        manifest.push_str(&format!("{key} = {},{}\n", v[0], v[1]));
    }
    write_atomic(&dir.join(BUNDLE_MANIFEST), manifest.as_bytes())?;
    for (i, m) in bundle.dynamics.members.members.iter().enumerate() {
        save_mlp(m, &dir.join(format!("dynamics_{i}.mlp")))?;
    }
    for (i, m) in bundle.value.members.members.iter().enumerate() {
        save_mlp(m, &dir.join(format!("value_{i}.mlp")))?;
        save_mlp(&bundle.value.targets[i], &dir.join(format!("value_target_{i}.mlp")))?;
    }
    save_mlp(&bundle.safe_set, &dir.join("safe_set.mlp"))?;
    save_mlp(&bundle.constraint, &dir.join("constraint.mlp"))?;
    save_mlp(&bundle.goal, &dir.join("goal.mlp"))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    let manifest = std::fs::read_to_string(dir.join(BUNDLE_MANIFEST))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join(BUNDLE_MANIFEST).display())))?;
    let mut lines = manifest.lines();
    if lines.next() != Some("saferl-bundle v1") {
        return Err(Error::Data("not a saferl bundle directory".into()));
    }
    let mut kv = std::collections::HashMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<String> {
        kv.get(key)
            .cloned()
            .ok_or_else(|| Error::Data(format!("bundle manifest missing '{key}'")))
    };
    let parse_pair = |key: &str| -> Result<[f64; 2]> {
        let raw = get(key)?;
        let mut it = raw.split(',').map(|v| v.trim().parse::<f64>());
        match (it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b))) => Ok([a, b]),
            _ => Err(Error::Data(format!("bad pair for '{key}'"))),
        }
    };
    let n_dyn: usize = get("n_dyn")?.parse().map_err(|_| Error::Data("bad n_dyn".into()))?;
    let n_value: usize = get("n_value")?.parse().map_err(|_| Error::Data("bad n_value".into()))?;
    let norm = NormStats {
        s_mean: parse_pair("s_mean")?,
        s_std: parse_pair("s_std")?,
        a_mean: parse_pair("a_mean")?,
        a_std: parse_pair("a_std")?,
        d_mean: parse_pair("d_mean")?,
        d_std: parse_pair("d_std")?,
    };
    let mut dyn_members = Vec::new();
    for i in 0..n_dyn {
        dyn_members.push(load_mlp(&dir.join(format!("dynamics_{i}.mlp")))?);
    }
    let mut value_members = Vec::new();
    let mut value_targets = Vec::new();
    for i in 0..n_value {
        value_members.push(load_mlp(&dir.join(format!("value_{i}.mlp")))?);
        value_targets.push(load_mlp(&dir.join(format!("value_target_{i}.mlp")))?);
    }
    let gamma: f64 = get("gamma")?.parse().map_err(|_| Error::Data("bad gamma".into()))?;
    let gamma_safe: f64 = get("gamma_safe")?
        .parse()
        .map_err(|_| Error::Data("bad gamma_safe".into()))?;
    Ok(ModelBundle {
        dynamics: DynamicsEnsemble::from_members(dyn_members, norm.clone()),
        value: ValueEnsemble::from_members(value_members, value_targets, gamma),
        safe_set: load_mlp(&dir.join("safe_set.mlp"))?,
        constraint: load_mlp(&dir.join("constraint.mlp"))?,
        goal: load_mlp(&dir.join("goal.mlp"))?,
        norm,
        gamma,
        gamma_safe,
        config_hash: get("config_hash")?,
    })
}
