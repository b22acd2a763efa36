//! Pipeline commands.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use surrogate_core::adversarial::{attack_batch, AttackMethod};
use surrogate_core::exec::Execution;
use surrogate_core::fields::{FieldKind, GridField};
use surrogate_core::io::{
    density_table, file_fingerprint, fmt_num, load_dataset, load_model, payload_path, save_dataset, save_model,
    ModelProvenance, Table,
};
use surrogate_core::rng;
use surrogate_core::simulator::{generate_dataset_with, simulate_batch, AttackProvenance, LabeledDataset};
use surrogate_core::tensor_net::{forward_batch, train, Network};
use surrogate_core::uq::{
    common_grid, kde, lda_project, matched_norm_noise, mc_density_experiment, moments_rows, per_sample_se_rows,
    perturbation_response, relative_error, silverman_bandwidth, DensityCurve, McDensityResult, SampleErrors,
};

use crate::config::ExperimentConfig;
use crate::{CliError, Mode};

type CmdResult<T = ()> = Result<T, CliError>;

const EXEC: Execution = Execution::Parallel;

/// File names inside the output directory. Datasets and models are stems
/// with `.toml` and `.bin` siblings.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train_set(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn test_set(&self) -> PathBuf {
        self.root.join("test")
    }

    pub fn model(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("model_{mode}"))
    }

    pub fn trace(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("trace_{mode}.csv"))
    }

    pub fn attack(&self, method: AttackMethod, source: Mode, eps: f64) -> PathBuf {
        self.root.join(format!("attack_{method}_{source}_eps{}", fmt_eps(eps)))
    }

    pub fn eval_mse(&self) -> PathBuf {
        self.root.join("eval_mse.csv")
    }

    pub fn eval_moments(&self) -> PathBuf {
        self.root.join("eval_moments.csv")
    }

    pub fn eval_pvalues(&self) -> PathBuf {
        self.root.join("eval_pvalues.csv")
    }

    pub fn uq_density(&self, mode: Mode, eps: f64) -> PathBuf {
        self.root.join(format!("uq_density_{mode}_eps{}.csv", fmt_eps(eps)))
    }

    pub fn uq_summary(&self) -> PathBuf {
        self.root.join("uq_summary.csv")
    }

    pub fn uq_response(&self, mode: Mode, direction: &str) -> PathBuf {
        self.root.join(format!("uq_response_{mode}_{direction}.csv"))
    }

    pub fn uq_lda(&self, panel: char) -> PathBuf {
        self.root.join(format!("uq_lda_{panel}.csv"))
    }
}

fn fmt_eps(eps: f64) -> String {
    format!("{eps}")
}

/// The attack each model is evaluated against most closely: FGNM for the
/// plain model, FGSM for the hardened one.
pub fn strong_attack(mode: Mode) -> AttackMethod {
    match mode {
        Mode::Ori => AttackMethod::Fgnm,
        Mode::Adv => AttackMethod::Fgsm,
    }
}

fn rms(m: &Array2<f64>) -> f64 {
    (m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64).sqrt()
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

fn write(table: &Table, path: &Path) -> CmdResult {
    table.write(path)?;
    Ok(())
}

/// Draws and labels the training and test sets.
pub fn cmd_gen(cfg: &ExperimentConfig) -> CmdResult {
    let art = Artifacts::new(&cfg.out_dir);
    fs::create_dir_all(&art.root)?;
    let grid = cfg.grid_spec();
    let fp = cfg.fingerprint();
    for (stem, n, tag) in [(art.train_set(), cfg.data.n_train, "train"), (art.test_set(), cfg.data.n_test, "test")] {
        let mut data = generate_dataset_with(EXEC, n, grid, &cfg.kernel, &cfg.solver, rng::tagged(cfg.seed, tag))?;
        data.meta.config = Some(fp.clone());
        save_dataset(&stem, &data)?;
    }
    Ok(())
}

/// Untrained surrogate shared by both modes.
pub fn initial_network(cfg: &ExperimentConfig, train_set: &LabeledDataset) -> CmdResult<Network> {
    let mut net = Network::surrogate(cfg.grid.nx, cfg.model.conv_channels, &cfg.model.hidden, rng::tagged(cfg.seed, "init"))?;
    let scale = rms(&train_set.output_matrix());
    if scale > 0.0 {
        net.set_output_scale(scale)?;
    }
    Ok(net)
}

/// Trains the plain (`ori`) or adversarially trained (`adv`) surrogate.
pub fn cmd_train(cfg: &ExperimentConfig, mode: Mode) -> CmdResult {
    let art = Artifacts::new(&cfg.out_dir);
    let data = load_dataset(&art.train_set())?;
    check_grid(cfg, &data)?;
    let net = initial_network(cfg, &data)?;
    let tc = cfg.train_config(mode == Mode::Adv);
    let out = train(net, &data, &tc)?;
    let prov = ModelProvenance {
        init_seed: rng::tagged(cfg.seed, "init"),
        train_data: file_fingerprint(&payload_path(&art.train_set()))?,
        config: Some(cfg.fingerprint()),
        train: tc,
    };
    save_model(&art.model(mode), &out.network, &prov)?;
    let mut t = Table::new(&["epoch", "objective"]);
    for (i, v) in out.trace.iter().enumerate() {
        t.push_numeric(&[(i + 1) as f64, *v]);
    }
    write(&t, &art.trace(mode))
}

fn check_grid(cfg: &ExperimentConfig, data: &LabeledDataset) -> CmdResult {
    if data.meta.nx != cfg.grid.nx {
        return Err(CliError::Config(format!("dataset has nx = {}, config has nx = {}", data.meta.nx, cfg.grid.nx)));
    }
    Ok(())
}

fn relabel(cfg: &ExperimentConfig, inputs: Vec<Vec<f64>>) -> CmdResult<Vec<GridField>> {
    Ok(simulate_batch(cfg.grid_spec(), &inputs, &cfg.solver, EXEC)?)
}

fn labeled(cfg: &ExperimentConfig, inputs: Vec<Vec<f64>>, template: &LabeledDataset) -> CmdResult<LabeledDataset> {
    let grid = cfg.grid_spec();
    let outputs = relabel(cfg, inputs.clone())?;
    let inputs = inputs
        .into_iter()
        .map(|v| GridField::new(grid, v, FieldKind::LogModulus))
        .collect::<Result<Vec<_>, _>>()?;
    let mut meta = template.meta.clone();
    meta.count = inputs.len();
    Ok(LabeledDataset::new(inputs, outputs, meta)?)
}

/// Perturbs the test set along `source`'s attack directions and relabels it
/// with the simulator. Samples without an FGNM direction are skipped.
pub fn cmd_attack(cfg: &ExperimentConfig, source: Mode, method: AttackMethod, eps: f64) -> CmdResult {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(CliError::Config(format!("--eps must be >= 0, got {eps}")));
    }
    let art = Artifacts::new(&cfg.out_dir);
    let (net, header) = load_model(&art.model(source))?;
    let test = load_dataset(&art.test_set())?;
    check_grid(cfg, &test)?;
    let x = test.input_matrix();
    let attack = attack_batch(&net, &x, &test.output_matrix(), method, eps)?;
    let keep: Vec<usize> = (0..test.len()).filter(|i| !attack.zero_gradient.contains(i)).collect();
    let perturbed = &x + &attack.deltas;
    let inputs: Vec<Vec<f64>> = keep.iter().map(|&i| perturbed.row(i).to_vec()).collect();
    let mut data = labeled(cfg, inputs, &test)?;
    data.meta.config = Some(cfg.fingerprint());
    data.meta.attack = Some(AttackProvenance {
        method: method.to_string(),
        eps,
        source_model: header.fingerprint,
        source_dataset: file_fingerprint(&payload_path(&art.test_set()))?,
        skipped: attack.zero_gradient,
        source_index: keep,
    });
    save_dataset(&art.attack(method, source, eps), &data)?;
    Ok(())
}

fn models(art: &Artifacts) -> CmdResult<[Network; 2]> {
    Ok([load_model(&art.model(Mode::Ori))?.0, load_model(&art.model(Mode::Adv))?.0])
}

fn predictions(net: &Network, data: &LabeledDataset) -> CmdResult<Array2<f64>> {
    Ok(forward_batch(net, &data.input_matrix())?)
}

/// Mean per-sample squared error of `net` on `data`.
pub fn mse(net: &Network, data: &LabeledDataset) -> CmdResult<f64> {
    Ok(per_sample_se_rows(&predictions(net, data)?, &data.output_matrix())?.mean())
}

fn source_rows(data: &LabeledDataset) -> Vec<usize> {
    match &data.meta.attack {
        Some(a) => a.source_index.clone(),
        None => (0..data.len()).collect(),
    }
}

/// Test inputs perturbed in random directions with the same per-sample norms
/// as the perturbations in `reference`, relabeled by the simulator.
pub fn random_counterpart(cfg: &ExperimentConfig, test: &LabeledDataset, reference: &LabeledDataset, mode: Mode) -> CmdResult<LabeledDataset> {
    let idx = source_rows(reference);
    let x = test.input_matrix();
    let xr = reference.input_matrix();
    let seed = rng::tagged(cfg.seed, &format!("random-counterpart-{mode}"));
    let inputs: Vec<Vec<f64>> = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let base = x.row(i);
            let norm = (&xr.row(k) - &base).mapv(|v| v * v).sum().sqrt();
            let eta = matched_norm_noise(base.len(), norm, &mut rng::stream(seed, i as u64));
            base.iter().zip(&eta).map(|(a, b)| a + b).collect()
        })
        .collect();
    labeled(cfg, inputs, reference)
}

fn mc_experiment(cfg: &ExperimentConfig, net: &Network, test: &LabeledDataset, mode: Mode, eps: f64) -> CmdResult<McDensityResult> {
    let seed = rng::tagged(cfg.seed, &format!("mc-{mode}"));
    Ok(mc_density_experiment(net, test, &cfg.solver, eps, cfg.counts(), seed, EXEC)?)
}

/// Table-style reports: MSE cross table, moment relative errors and rank-test p-values.
pub fn cmd_eval(cfg: &ExperimentConfig) -> CmdResult {
    let art = Artifacts::new(&cfg.out_dir);
    let nets = models(&art)?;
    let test = load_dataset(&art.test_set())?;
    check_grid(cfg, &test)?;
    let eps = cfg.attack.eps;
    let columns = [
        (AttackMethod::Fgnm, Mode::Ori),
        (AttackMethod::Fgsm, Mode::Ori),
        (AttackMethod::Fgnm, Mode::Adv),
        (AttackMethod::Fgsm, Mode::Adv),
    ];
    let attacked = columns
        .iter()
        .map(|&(m, s)| load_dataset(&art.attack(m, s, eps)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut header = vec!["model".to_string(), "clean".to_string()];
    header.extend(columns.iter().map(|(m, s)| format!("{m}_{s}")));
    let mut mse_table = Table::new(&header);
    for (mode, net) in Mode::ALL.iter().zip(&nets) {
        let mut row = vec![mode.to_string(), fmt_num(mse(net, &test)?)];
        for d in &attacked {
            row.push(fmt_num(mse(net, d)?));
        }
        mse_table.push(&row);
    }
    write(&mse_table, &art.eval_mse())?;

    let mut moment_table = Table::new(&["model", "test_set", "re_m1", "re_m2"]);
    for (mode, net) in Mode::ALL.iter().zip(&nets) {
        let own = &attacked[columns.iter().position(|&c| c == (strong_attack(*mode), *mode)).unwrap()];
        let rand = random_counterpart(cfg, &test, own, *mode)?;
        for (name, d) in [("clean", &test), ("rand", &rand), ("fg", own)] {
            let (re1, re2) = moment_errors(net, d)?;
            moment_table.push(&[mode.to_string(), name.to_string(), fmt_num(re1), fmt_num(re2)]);
        }
    }
    write(&moment_table, &art.eval_moments())?;

    let mut rank_table = Table::new(&["model", "method", "eps", "u_statistic", "p_value", "n1", "n2", "exact"]);
    for (mode, net) in Mode::ALL.iter().zip(&nets) {
        let method = strong_attack(*mode);
        for &e in &cfg.uq.eps_ladder {
            let mc = mc_experiment(cfg, net, &test, *mode, e)?;
            let adversarial = match method {
                AttackMethod::Fgnm => &mc.se_fgnm,
                AttackMethod::Fgsm => &mc.se_fgsm,
            };
            let r = surrogate_core::uq::mann_whitney_u(&adversarial.se, &mc.se_rand.se)?;
            let exact = if r.method == surrogate_core::uq::RankMethod::Exact { "1" } else { "0" };
            rank_table.push(&[
                mode.to_string(),
                method.to_string(),
                fmt_num(e),
                fmt_num(r.u_statistic),
                fmt_num(r.p_value),
                r.n1.to_string(),
                r.n2.to_string(),
                exact.to_string(),
            ]);
        }
    }
    write(&rank_table, &art.eval_pvalues())
}

/// Relative errors of the first and second output moments of `net` against the simulator labels.
pub fn moment_errors(net: &Network, data: &LabeledDataset) -> CmdResult<(f64, f64)> {
    let sim = moments_rows(&data.output_matrix())?;
    let model = moments_rows(&predictions(net, data)?)?;
    Ok((relative_error(&model.m1, &sim.m1)?, relative_error(&model.m2, &sim.m2)?))
}

fn density_pair(a: &SampleErrors, b: &SampleErrors) -> CmdResult<(DensityCurve, DensityCurve)> {
    let ha = silverman_bandwidth(&a.log_se)?;
    let hb = silverman_bandwidth(&b.log_se)?;
    let grid = common_grid(&[(&a.log_se, ha), (&b.log_se, hb)])?;
    Ok((kde(&a.log_se, &grid, ha)?, kde(&b.log_se, &grid, hb)?))
}

/// Density curves, perturbation-response densities and LDA coordinates.
pub fn cmd_uq(cfg: &ExperimentConfig) -> CmdResult {
    let art = Artifacts::new(&cfg.out_dir);
    let nets = models(&art)?;
    let test = load_dataset(&art.test_set())?;
    check_grid(cfg, &test)?;

    let mut summary = Table::new(&[
        "model", "eps", "n_rand", "n_adv", "mean_rand", "mean_fgnm", "mean_fgsm", "max_rand",
        "zero_rand", "zero_fgnm", "zero_fgsm", "skipped",
    ]);
    for (mode, net) in Mode::ALL.iter().zip(&nets) {
        for &e in &cfg.uq.eps_ladder {
            let mc = mc_experiment(cfg, net, &test, *mode, e)?;
            write(&density_table(&["rand", "fgnm", "fgsm"], &[&mc.f_rand, &mc.f_fgnm, &mc.f_fgsm])?, &art.uq_density(*mode, e))?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let max_rand = mc.se_rand.log_se.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            summary.push(&[
                mode.to_string(),
                fmt_num(e),
                mc.se_rand.se.len().to_string(),
                mc.se_fgnm.se.len().to_string(),
                fmt_num(mean(&mc.se_rand.log_se)),
                fmt_num(mean(&mc.se_fgnm.log_se)),
                fmt_num(mean(&mc.se_fgsm.log_se)),
                fmt_num(max_rand),
                mc.se_rand.zero_count.to_string(),
                mc.se_fgnm.zero_count.to_string(),
                mc.se_fgsm.zero_count.to_string(),
                mc.skipped.len().to_string(),
            ]);
        }
    }
    write(&summary, &art.uq_summary())?;

    // output change under perturbation: simulator versus surrogate
    let eps = cfg.attack.eps;
    let x = test.input_matrix();
    let y = test.output_matrix();
    for (mode, net) in Mode::ALL.iter().zip(&nets) {
        let own = load_dataset(&art.attack(strong_attack(*mode), *mode, eps))?;
        let rand = random_counterpart(cfg, &test, &own, *mode)?;
        let idx = source_rows(&own);
        let xs = x.select(Axis(0), &idx);
        let ys = y.select(Axis(0), &idx);
        for (direction, d) in [("rand", &rand), ("fg", &own)] {
            let r = perturbation_response(net, &xs, &ys, &d.input_matrix(), &d.output_matrix())?;
            let (fs, fm) = density_pair(&r.simulator, &r.model)?;
            write(&density_table(&["simulator", "model"], &[&fs, &fm])?, &art.uq_response(*mode, direction))?;
        }
    }

    // LDA panels a-f: each model on clean, FGNM-ori and FGNM-adv test inputs
    let fgnm_ori = load_dataset(&art.attack(AttackMethod::Fgnm, Mode::Ori, eps))?;
    let fgnm_adv = load_dataset(&art.attack(AttackMethod::Fgnm, Mode::Adv, eps))?;
    let panels = ['a', 'b', 'c', 'd', 'e', 'f'];
    let mut p = 0;
    for net in &nets {
        for d in [&test, &fgnm_ori, &fgnm_adv] {
            let se = per_sample_se_rows(&predictions(net, d)?, &d.output_matrix())?;
            let coords = lda_project(&to_rows(&d.input_matrix()), &se)?;
            let mut t = Table::new(&["ld1", "ld2", "se"]);
            for (c, s) in coords.iter().zip(&se.se) {
                t.push_numeric(&[c[0], c[1], *s]);
            }
            write(&t, &art.uq_lda(panels[p]))?;
            p += 1;
        }
    }
    Ok(())
}

/// Every stage in order: data, both models, the four attack sets at the
/// configured magnitude, evaluation and UQ reports.
pub fn cmd_run(cfg: &ExperimentConfig) -> CmdResult {
    cmd_gen(cfg)?;
    for mode in Mode::ALL {
        cmd_train(cfg, mode)?;
    }
    for mode in Mode::ALL {
        for method in [AttackMethod::Fgnm, AttackMethod::Fgsm] {
            cmd_attack(cfg, mode, method, cfg.attack.eps)?;
        }
    }
    cmd_eval(cfg)?;
    cmd_uq(cfg)
}
