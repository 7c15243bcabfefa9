//! `vopr` command-line runner.
//!
//! Every subcommand reads an experiment config (`--config`) and writes its
//! outputs into a directory (`--out`). Exit codes: 0 success, 2 config error,
//! 3 hard failure (including any failed experiment row).

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vopr::dataset::sample_dataset;
use vopr::function_classes::{build_realizable_classes, DistractorSpec};
use vopr::harness::{adversarial_policy, run_experiment, summarize, ExperimentConfig, Instance};
use vopr::mdp::expected_return;
use vopr::solver::{vopr as solve, SolveInputs};
use vopr::theory::{
    advantage_inner, concentrability_cc, concentrability_cd, near_optimal_policies,
    verify_advantage_to_suboptimality, write_chain_csv, write_policy_csv,
};
use vopr::{Error, Result};

#[derive(Parser)]
#[command(
    name = "vopr",
    version,
    about = "Tabular offline RL with a covering distribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured MDP to `mdp.toml`
    GenMdp(Io),
    /// Reproduce the two-route counterexample with the adversarial tie-break
    Counterexample(Io),
    /// Sample a dataset for the first seed and N into `dataset.jsonl`
    Sample(Io),
    /// Run the learner once (first seed and N) and write its report and loss table
    Solve(Io),
    /// Coverage coefficients and the advantage chain for the configured instance
    Verify(Io),
    /// Run every (seed, N) pair, appending to the rows CSV
    Experiment(Io),
}

fn load(io: &Io) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(&io.config)?;
    std::fs::create_dir_all(&io.out)?;
    Ok(cfg)
}

fn gen_mdp(io: &Io) -> Result<()> {
    let inst = Instance::from_config(&load(io)?)?;
    inst.mdp.save(io.out.join("mdp.toml"))?;
    println!("wrote {}", io.out.join("mdp.toml").display());
    Ok(())
}

fn sample(io: &Io) -> Result<()> {
    let cfg = load(io)?;
    let inst = Instance::from_config(&cfg)?;
    let (seed, n) = (cfg.run.seeds[0], cfg.run.n_grid[0]);
    let ds = sample_dataset(&inst.mdp, &inst.mu_data, &inst.pi_b, n, seed)?;
    ds.write_jsonl(File::create(io.out.join("dataset.jsonl"))?)?;
    println!("wrote {n} tuples (seed {seed})");
    Ok(())
}

fn solve_once(io: &Io) -> Result<()> {
    let cfg = load(io)?;
    let inst = Instance::from_config(&cfg)?;
    let (seed, n) = (cfg.run.seeds[0], cfg.run.n_grid[0]);
    let cov = &inst.covering;
    let spec = DistractorSpec {
        count: cfg.classes.distractors,
        scale: cfg.classes.scale,
    };
    let mut classes = build_realizable_classes(
        &inst.mdp,
        &inst.opt,
        &cov.d_c,
        &inst.d_data,
        &cov.pi_c,
        spec,
        seed,
    )?;
    if let Some(beta) = &inst.adversarial_ratio {
        classes.b = classes
            .b
            .with_leading_member(beta.clone(), Some(&cov.pi_c))?;
    }
    let ds = sample_dataset(&inst.mdp, &inst.mu_data, &inst.pi_b, n, seed)?;
    let report = solve(
        &ds,
        &SolveInputs {
            gamma: inst.mdp.gamma(),
            v_max: inst.mdp.v_max(),
            d_c: &cov.d_c,
            mu_c: &cov.mu_c,
            pi_c: &cov.pi_c,
            q_class: &classes.q,
            w_class: &classes.w,
            b_class: &classes.b,
            delta: cfg.run.delta,
        },
    )?;
    report.save(&io.out)?;
    let j_hat = expected_return(&inst.mdp, &report.pi_hat)?;
    println!(
        "q index {} (Q* at {}), beta index {}, J* = {}, J_hat = {}, eps_stat = {}",
        report.q_index,
        classes.q_star_index,
        report.beta_index,
        inst.opt.j_star,
        j_hat,
        report.epsilon_stat
    );
    Ok(())
}

fn verify_instance(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let inst = Instance::from_config(cfg)?;
    let (mdp, opt, cov) = (&inst.mdp, &inst.opt, &inst.covering);
    let mut text = format!("J* = {}\nV_max = {}\n", opt.j_star, mdp.v_max());

    let policies = near_optimal_policies(mdp, opt, 0.0, cfg.run.horizon, cfg.run.enumeration_cap)?;
    write_policy_csv(
        &cov.mu_c,
        &policies,
        File::create(out.join("policies.csv"))?,
    )?;
    let cc = concentrability_cc(
        mdp,
        opt,
        &cov.mu_c,
        0.0,
        cfg.run.horizon,
        cfg.run.enumeration_cap,
    )?;
    text += &format!(
        "C_c (eps = 0, horizon {}): {} over {} policies, witness state {}\n",
        cc.horizon_used, cc.coefficient, cc.policy_count, cc.witness_index
    );
    let cd = concentrability_cd(mdp, opt, &cov.d_c, &inst.d_data)?;
    text += &format!("C_D: {} at pair {}\n", cd.coefficient, cd.witness_index);

    let pi_adv = adversarial_policy(mdp, opt, &cov.mu_c)?;
    let inner = advantage_inner(&opt.q_star, cov.mu_c.weights(), &pi_adv, &opt.pi_star);
    let chain = verify_advantage_to_suboptimality(
        mdp,
        opt,
        &cov.mu_c,
        &pi_adv,
        0.0,
        cc.coefficient,
        cfg.run.horizon,
    )?;
    write_chain_csv(&chain, File::create(out.join("chain.csv"))?)?;
    text += &format!(
        "worst zero-advantage policy {:?}: advantage {inner}, gap {}, covered {}, lemma violated {}\n",
        pi_adv.as_deterministic().unwrap_or_default(),
        chain.gap,
        chain.covered,
        chain.violated()
    );
    std::fs::write(out.join("verify_summary.txt"), &text)?;
    Ok(text)
}

fn verify(io: &Io) -> Result<()> {
    let cfg = load(io)?;
    print!("{}", verify_instance(&cfg, &io.out)?);
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let rows = run_experiment(cfg, out)?;
    let summary = summarize(&rows);
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    let failed = rows.iter().filter(|r| r.is_error()).count();
    if failed > 0 {
        eprintln!("{failed} rows failed; see the error column");
    }
    Ok(failed == 0)
}

fn counterexample(io: &Io) -> Result<bool> {
    let mut cfg = ExperimentConfig::read(&io.config)?;
    cfg.mdp.builtin = Some("counterexample".into());
    cfg.mdp.file = None;
    cfg.mdp.gamma.get_or_insert(0.9);
    cfg.run.adversarial_tie_break = true;
    cfg.validate()?;
    std::fs::create_dir_all(&io.out)?;
    print!("{}", verify_instance(&cfg, &io.out)?);
    experiment(&cfg, &io.out)
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenMdp(io) => gen_mdp(io).map(|_| true),
        Command::Counterexample(io) => counterexample(io),
        Command::Sample(io) => sample(io).map(|_| true),
        Command::Solve(io) => solve_once(io).map(|_| true),
        Command::Verify(io) => verify(io).map(|_| true),
        Command::Experiment(io) => load(io).and_then(|cfg| experiment(&cfg, &io.out)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
