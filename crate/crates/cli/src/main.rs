//! `bvmlab`: command-line front end for the Bernstein-von Mises laboratory.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for violated
//! hypotheses, 1 otherwise. Failures print `error code=<name> ...` as the
//! first line on stderr, followed by a readable diagnostic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bvmlab::bayes::{rng_for, simulate_with, theta_posterior_adaptive};
use bvmlab::bvm_lab::{
    coverage_study, efficiency_at_truth, gamma_in_rkhs, run_experiment_with_posteriors,
    write_coverage, write_posterior, write_reports, write_z_scores,
};
use bvmlab::config::Experiment;
use bvmlab::efficiency::{information_forms, scenario_check};
use bvmlab::model::ModelFamily;
use bvmlab::xray::write_sinogram;
use bvmlab::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "bvmlab",
    version,
    about = "Semiparametric Bernstein-von Mises laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the observation for every n of the ladder.
    Simulate(Common),
    /// Marginal posterior of theta on the adaptive grid for every n.
    Posterior(Common),
    /// Efficient information at the truth.
    Info(Common),
    /// Least favourable direction at the truth.
    Lfd(Common),
    /// Rate exponents and the applicable scenario.
    Rates(Common),
    /// Posterior vs reference report over the n-ladder.
    Bvm(Common),
    /// Credible-interval coverage over independent replicates.
    Coverage(Common),
    /// Attenuated X-ray matrix and sinogram of the truth.
    XrayForward(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "BVMLAB_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    match e.root() {
        Error::Config { .. } | Error::Parse(_) => 2,
        Error::Hypothesis(_) => 3,
        _ => 1,
    }
}

fn report_error(e: &Error) {
    let mut line = format!("error code={}", e.code());
    let mut cur = e;
    while let Error::Stage { stage, source } = cur {
        line += &format!(" stage={stage}");
        cur = source;
    }
    if let Error::Config { field, .. } = cur {
        line += &format!(" field={field}");
    }
    eprintln!("{line}");
    eprintln!("bvmlab: {e}");
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Simulate(c)
        | Command::Posterior(c)
        | Command::Info(c)
        | Command::Lfd(c)
        | Command::Rates(c)
        | Command::Bvm(c)
        | Command::Coverage(c)
        | Command::XrayForward(c) => c,
    }
}

fn dispatch(cmd: &Command) -> bvmlab::Result<()> {
    let opts = common(cmd);
    if let Some(threads) = opts.threads {
        if threads == 0 {
            return Err(Error::config("--threads", "must be positive"));
        }
        // a pool installed earlier in the process is kept
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let mut exp = Experiment::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        exp.seed = seed;
    }
    std::fs::create_dir_all(&opts.out)?;
    let out = opts.out.as_path();
    match cmd {
        Command::Simulate(_) => simulate(&exp, out),
        Command::Posterior(_) => posterior(&exp, out),
        Command::Info(_) => info(&exp, out),
        Command::Lfd(_) => lfd(&exp, out),
        Command::Rates(_) => rates(&exp, out),
        Command::Bvm(_) => bvm(&exp, out),
        Command::Coverage(_) => coverage(&exp, out),
        Command::XrayForward(_) => xray_forward(&exp, out),
    }
}

fn create(out: &Path, name: &str) -> bvmlab::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn posterior_name(n: f64) -> String {
    format!("posterior_n{n:e}.csv")
}

/// Noise stream shared by every `n`, as in the report pipeline.
const RUN_STREAM: u64 = 0;

fn simulate(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let mut w = create(out, "observations.csv")?;
    writeln!(w, "n,index,x,noise")?;
    for &n in &exp.n_list {
        let obs = simulate_with(
            exp.theta0,
            &exp.f0,
            &exp.family,
            n,
            &mut rng_for(exp.seed, RUN_STREAM),
        )?;
        for (i, (x, e)) in obs.x.iter().zip(obs.noise.iter()).enumerate() {
            writeln!(w, "{n:e},{i},{x:e},{e:e}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn posterior(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    for &n in &exp.n_list {
        let obs = simulate_with(
            exp.theta0,
            &exp.f0,
            &exp.family,
            n,
            &mut rng_for(exp.seed, RUN_STREAM),
        )?;
        let post = theta_posterior_adaptive(
            &obs,
            &exp.prior(n),
            &exp.family,
            &exp.theta_prior,
            exp.grid_nodes,
        )?;
        println!("n={n:e} mean={:.6e} sd={:.6e}", post.mean, post.sd());
        write_posterior(create(out, &posterior_name(n))?, &post)?;
    }
    Ok(())
}

fn info(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let eff = efficiency_at_truth(exp)?;
    let f0 = exp
        .f0
        .to_ambient()
        .retruncate(eff.model.basis().truncation())?;
    let (direct, difference, full) = information_forms(&eff.model, &f0, &eff.gamma)?;
    let mut w = create(out, "info.csv")?;
    writeln!(w, "quantity,value")?;
    writeln!(w, "info,{:e}", eff.info)?;
    writeln!(w, "info_direct,{direct:e}")?;
    writeln!(w, "info_difference,{difference:e}")?;
    writeln!(w, "info_without_nuisance,{full:e}")?;
    if let Some(sol) = &eff.solution {
        writeln!(w, "residual,{:e}", sol.residual)?;
        writeln!(w, "condition,{:e}", sol.condition)?;
    }
    w.flush()?;
    println!("info={:.12e}", eff.info);
    Ok(())
}

fn lfd(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let eff = efficiency_at_truth(exp)?;
    eff.gamma.write_to(create(out, "lfd.csv")?)?;
    match &eff.solution {
        Some(sol) => print!("{sol}"),
        None => println!("info={:.12e}", eff.info),
    }
    Ok(())
}

fn rates(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let outcome = scenario_check(
        &exp.bundle,
        exp.family.norm_constant_in_theta(),
        gamma_in_rkhs(exp),
    )?;
    let mut w = create(out, "rates.csv")?;
    writeln!(w, "quantity,value")?;
    write!(w, "{}{}", exp.bundle, outcome)?;
    w.flush()?;
    print!("{}{}", exp.bundle, outcome);
    Ok(())
}

fn bvm(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let runs = run_experiment_with_posteriors(exp)?;
    let reports: Vec<_> = runs.iter().map(|(r, _)| r.clone()).collect();
    write_reports(create(out, "bvm.csv")?, &reports)?;
    for (r, post) in &runs {
        write_posterior(create(out, &posterior_name(r.n))?, post)?;
        println!(
            "n={:e} tv={:.6} n*var*info={:.4}",
            r.n,
            r.tv,
            r.n * r.post_var * r.info
        );
    }
    Ok(())
}

fn coverage(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let report = coverage_study(exp, exp.replicates)?;
    write_coverage(create(out, "coverage.csv")?, &report)?;
    write_z_scores(create(out, "z_scores.csv")?, &report)?;
    println!(
        "coverage={:.4} band=[{}, {}] z_variance={:.4} ks={:.4}",
        report.coverage, report.band.0, report.band.1, report.z_variance, report.ks
    );
    Ok(())
}

fn xray_forward(exp: &Experiment, out: &Path) -> bvmlab::Result<()> {
    let ModelFamily::Xray(table) = &exp.family else {
        return Err(Error::config(
            "model.example",
            "xray-forward needs the xray example",
        ));
    };
    let matrix = table.assemble(exp.theta0);
    matrix.write_to(create(out, "xray_matrix.csv")?)?;
    let values = matrix.apply(&exp.f0)?;
    write_sinogram(create(out, "sinogram.csv")?, &matrix, &values)?;
    println!(
        "lines={} modes={}",
        table.n_lines(),
        table.basis().dim() / 2
    );
    Ok(())
}
