use std::path::Path;

use diffbal::balancing::balancing_residuals;
use diffbal::io::{
    error_report_json, matrix_from_csv, matrix_to_csv, pd_report_json, read_gramian, to_json,
    trajectory_from_csv, trajectory_to_csv, BalancingMeta, CertificateMeta, GramianMeta,
    SCHEMA_VERSION,
};
use diffbal::symmetry::CongruenceConvention;
use diffbal::{
    balance, check_variational_symmetry, compare_output_series, default_samples,
    dual_reachability_gramian, eigen_truncate_basis, integrate, observability_gramian, pd_probe,
    reachability_gramian, truncate, Error, Gramian, GramianKind, GramianMethod, GramianOptions,
    ImpulseRealization, InputSignal, ModelSpec, Projection, Result, SystemModel, TimeGrid,
    Trajectory,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cli::{
    BalanceArgs, BaseArgs, CompareArgs, GramianArgs, ImpulseArg, KindArg, MethodArg, PdArgs,
    PdKindArg, ReduceArgs, SimulateArgs, SymmetryArgs,
};
use crate::manifest::{GridRecord, Run};

/// Resolved base-trajectory inputs.
struct Setup {
    sys: SystemModel<f64>,
    grid: TimeGrid<f64>,
    x0: DVector<f64>,
    input: InputSignal<f64>,
    args: BaseArgs,
}

impl Setup {
    fn simulate(&self) -> Result<Trajectory<f64>> {
        integrate(&self.sys, &self.x0, &self.input, &self.grid, self.args.scheme)
    }
}

fn setup(run: &mut Run, args: &BaseArgs) -> Result<Setup> {
    let spec = if args.model.starts_with("rl:") {
        ModelSpec::from_arg(&args.model)?
    } else {
        ModelSpec::from_json(&run.read_input(Path::new(&args.model))?)?
    };
    let sys = spec.build::<f64>()?;
    let grid = TimeGrid::new(args.t0, args.tf, args.dt).map_err(|e| match e {
        Error::Grid(msg) => Error::Grid(format!(
            "{msg}; check --t0 {}, --tf {}, --dt {}",
            args.t0, args.tf, args.dt
        )),
        other => other,
    })?;
    let x0 = initial_state(run, &args.x0, sys.n())?;
    let input_text = match (&args.input, spec.default_inputs()) {
        (Some(text), _) => text.clone(),
        (None, Some(defaults)) => defaults.join(";"),
        (None, None) => "zero".to_string(),
    };
    let input = InputSignal::parse(&input_text, sys.m())?;

    let m = &mut run.manifest;
    m.model = Some(args.model.clone());
    m.model_spec = Some(spec);
    m.grid = Some(GridRecord {
        t0: args.t0,
        tf: args.tf,
        dt: args.dt,
    });
    m.scheme = Some(args.scheme);
    Ok(Setup {
        sys,
        grid,
        x0,
        input,
        args: args.clone(),
    })
}

fn parse_numbers(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{what}: '{s}' is not a number")))
        })
        .collect()
}

fn initial_state(run: &mut Run, arg: &str, n: usize) -> Result<DVector<f64>> {
    let values = if arg == "zeros" {
        vec![0.0; n]
    } else if let Some(scale) = arg.strip_prefix("random:") {
        let scale: f64 = scale
            .parse()
            .map_err(|_| Error::Config(format!("--x0: bad scale in '{arg}'")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed());
        (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
    } else if Path::new(arg).is_file() {
        parse_numbers(&run.read_input(Path::new(arg))?, "--x0")?
    } else {
        parse_numbers(arg, "--x0")?
    };
    if values.len() != n {
        return Err(Error::Config(format!(
            "--x0 has {} entries, model has n = {n}",
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn symmetry_matrix(run: &mut Run, arg: &str, n: usize) -> Result<DMatrix<f64>> {
    if arg == "identity" {
        return Ok(DMatrix::identity(n, n));
    }
    matrix_from_csv(&run.read_input(Path::new(arg))?)
}

fn load_gramian(run: &mut Run, path: &Path) -> Result<Gramian<f64>> {
    run.read_input(path)?;
    run.read_input(&path.with_extension("json"))?;
    read_gramian(path)
}

fn write_gramian(run: &mut Run, stem: &str, g: &Gramian<f64>) -> Result<()> {
    run.write(&format!("{stem}.csv"), &matrix_to_csv(&g.w))?;
    run.write(&format!("{stem}.json"), &to_json(&GramianMeta::of(g))?)
}

fn summarize_spectrum(label: &str, g: &Gramian<f64>) {
    let eig = g.eigenvalues();
    println!(
        "{label}: n = {}, lambda_max = {:.3e}, lambda_min = {:.3e}",
        eig.len(),
        eig[0],
        eig[eig.len() - 1]
    );
}

pub fn simulate(run: &mut Run, args: &SimulateArgs) -> Result<()> {
    let setup = setup(run, &args.base)?;
    let traj = setup.simulate()?;
    run.write("trajectory.csv", &trajectory_to_csv(&traj))?;
    println!(
        "simulated {} over [{}, {}] in {} steps",
        setup.sys.name(),
        args.base.t0,
        args.base.tf,
        setup.grid.steps()
    );
    Ok(())
}

#[derive(Serialize)]
struct CongruenceRecord {
    schema_version: u32,
    mismatch_st_w_s: f64,
    mismatch_s_w_st: f64,
    matched: CongruenceConvention,
    tolerance: f64,
}

pub fn gramian(run: &mut Run, args: &GramianArgs) -> Result<()> {
    let setup = setup(run, &args.base)?;
    let base = setup.simulate()?;
    let interval = (
        args.t1.unwrap_or(args.base.t0),
        args.t2.unwrap_or(args.base.tf),
    );
    let method = match args.method {
        MethodArg::Exact => GramianMethod::ExactVariational,
        MethodArg::Frechet => GramianMethod::FrechetApprox,
    };
    run.manifest.method = Some(method);
    if method == GramianMethod::FrechetApprox {
        run.manifest.s = Some(args.s);
    }
    let opts = GramianOptions {
        s: args.s,
        impulse: match args.impulse {
            ImpulseArg::StateJump => ImpulseRealization::StateJump,
            ImpulseArg::FinitePulse => ImpulseRealization::FinitePulse,
        },
        parallel: run.parallel,
    };
    match args.kind {
        KindArg::Reach => {
            let g = reachability_gramian(&setup.sys, &base, interval, method, &opts)?;
            write_gramian(run, "reachability", &g)?;
            summarize_spectrum("reachability", &g);
        }
        KindArg::Obs => {
            let g = observability_gramian(&setup.sys, &base, interval, method, &opts)?;
            write_gramian(run, "observability", &g)?;
            summarize_spectrum("observability", &g);
        }
        KindArg::Dual => {
            if method != GramianMethod::ExactVariational {
                return Err(Error::Config(
                    "--kind dual simulates the dual variational system; use --method exact".into(),
                ));
            }
            let s = symmetry_matrix(run, &args.s_matrix, setup.sys.n())?;
            let cert =
                check_variational_symmetry(&setup.sys, &s, &default_samples(&base), args.tau)?;
            let report = dual_reachability_gramian(&setup.sys, &cert, &base, interval)?;
            write_gramian(run, "dual", &report.dual)?;
            run.write(
                "congruence.json",
                &to_json(&CongruenceRecord {
                    schema_version: SCHEMA_VERSION,
                    mismatch_st_w_s: report.mismatch_st_w_s,
                    mismatch_s_w_st: report.mismatch_s_w_st,
                    matched: report.matched,
                    tolerance: report.tolerance,
                })?,
            )?;
            summarize_spectrum("dual reachability", &report.dual);
            println!(
                "congruence: S·W·Sᵀ {:.3e}, Sᵀ·W·S {:.3e}, matched {:?}",
                report.mismatch_s_w_st, report.mismatch_st_w_s, report.matched
            );
        }
    }
    Ok(())
}

pub fn balance_cmd(run: &mut Run, args: &BalanceArgs) -> Result<()> {
    let (meta, t, tinv) = if args.symmetric {
        let path = args.w.as_deref().expect("clap requires --w with --symmetric");
        let g = load_gramian(run, path)?;
        let e = eigen_truncate_basis(&g);
        let t = e.basis.transpose();
        let residuals = balancing_residuals(&t, &e.basis, &e.eigenvalues, &g.w, &g.w);
        let meta = BalancingMeta {
            schema_version: SCHEMA_VERSION,
            sigma: e.eigenvalues.iter().copied().collect(),
            effective_rank: g.n(),
            residuals,
        };
        (meta, t, e.basis)
    } else {
        let wr_path = args.wr.as_deref().expect("clap requires --wr");
        let wo_path = args.wo.as_deref().expect("clap requires --wo");
        let wr = load_gramian(run, wr_path)?;
        let wo = load_gramian(run, wo_path)?;
        let b = balance(&wr, &wo)?;
        (BalancingMeta::of(&b), b.t, b.tinv)
    };
    run.write("balancing.json", &to_json(&meta)?)?;
    run.write("T.csv", &matrix_to_csv(&t))?;
    run.write("Tinv.csv", &matrix_to_csv(&tinv))?;
    println!(
        "sigma_1 = {:.3e}, effective rank {} of {}",
        meta.sigma.first().copied().unwrap_or(0.0),
        meta.effective_rank,
        meta.sigma.len()
    );
    Ok(())
}

pub fn reduce(run: &mut Run, args: &ReduceArgs) -> Result<()> {
    let setup = setup(run, &args.base)?;
    let t = matrix_from_csv(&run.read_input(&args.transform.join("T.csv"))?)?;
    let tinv = matrix_from_csv(&run.read_input(&args.transform.join("Tinv.csv"))?)?;
    let meta: BalancingMeta =
        serde_json::from_str(&run.read_input(&args.transform.join("balancing.json"))?)?;
    let projection = Projection {
        t,
        tinv,
        max_order: meta.effective_rank,
    };
    let reduced = truncate(&setup.sys, &projection, args.k)?;
    let traj = reduced.simulate(&setup.x0, &setup.input, &setup.grid, args.base.scheme)?;
    run.write("reduced.csv", &trajectory_to_csv(&traj))?;
    println!("reduced {} to order {}", setup.sys.name(), args.k);
    Ok(())
}

pub fn compare(run: &mut Run, args: &CompareArgs) -> Result<()> {
    let full: Trajectory<f64> =
        trajectory_from_csv(&run.read_input(&args.full)?, "full", Default::default())?;
    let reduced: Trajectory<f64> =
        trajectory_from_csv(&run.read_input(&args.reduced)?, "reduced", Default::default())?;
    let (times, times_r) = (full.times(), reduced.times());
    if times.len() != times_r.len()
        || times
            .iter()
            .zip(&times_r)
            .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs()))
    {
        return Err(Error::Dimension(format!(
            "time grids differ: {} vs {} samples",
            times.len(),
            times_r.len()
        )));
    }
    let report = compare_output_series(&times, full.outputs(), reduced.outputs())?;
    run.write("error_report.json", &error_report_json(&report)?)?;

    let p = full.outputs()[0].len();
    let mut series = String::from("t");
    for i in 1..=p {
        series.push_str(&format!(",e{i}"));
    }
    series.push('\n');
    for (j, t) in times.iter().enumerate() {
        series.push_str(&format!("{t:.16e}"));
        for (a, b) in full.outputs()[j].iter().zip(reduced.outputs()[j].iter()) {
            series.push_str(&format!(",{:.16e}", a - b));
        }
        series.push('\n');
    }
    run.write("error.csv", &series)?;
    println!(
        "rel_l2 = {:.3e}, max_abs = {:.3e} at t = {}",
        report.rel_l2, report.max_abs, report.argmax_t
    );
    Ok(())
}

pub fn check_pd(run: &mut Run, args: &PdArgs) -> Result<()> {
    let setup = setup(run, &args.base)?;
    let base = setup.simulate()?;
    let kind = match args.kind {
        PdKindArg::Reach => GramianKind::Reachability,
        PdKindArg::Obs => GramianKind::Observability,
    };
    run.manifest.method = Some(GramianMethod::ExactVariational);
    let report = pd_probe(&setup.sys, &base, kind, args.subintervals, args.tau)?;
    run.write("pd_report.json", &pd_report_json(&report)?)?;
    let negative = report.entries.iter().filter(|e| !e.positive).count();
    println!(
        "verdict {}: {} of {} subintervals not positive definite",
        if report.verdict { "positive" } else { "negative" },
        negative,
        report.entries.len()
    );
    Ok(())
}

pub fn check_symmetry(run: &mut Run, args: &SymmetryArgs) -> Result<()> {
    let setup = setup(run, &args.base)?;
    let base = setup.simulate()?;
    let s = symmetry_matrix(run, &args.s_matrix, setup.sys.n())?;
    let cert = check_variational_symmetry(&setup.sys, &s, &default_samples(&base), args.tau)?;
    run.write("certificate.json", &to_json(&CertificateMeta::of(&cert))?)?;
    println!(
        "verdict {}: res_dyn = {:.3e}, res_out = {:.3e}",
        if cert.verdict { "positive" } else { "negative" },
        cert.res_dyn,
        cert.res_out
    );
    Ok(())
}
