use robust_itr::data::write_csv;
use robust_itr::eval::{evaluate_rule_ipw, evaluate_rule_simulation};
use robust_itr::experiment::{run_cv, run_experiment, CvConfig, ExperimentConfig};
use robust_itr::learn::fit_rule;
use robust_itr::simgen::{generate, generate_illustrative};
use robust_itr::{Dataset, ScenarioId, ScenarioSpec, TreatmentRule};

use crate::config::{Command, RunConfig};
use crate::output::{num, OutDir};
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = OutDir::create(&cfg.output)?;
    match cfg.command {
        Command::Simulate => simulate(cfg, &out)?,
        Command::Train => train(cfg, &out)?,
        Command::Evaluate => evaluate(cfg, &out)?,
        Command::Experiment => experiment(cfg, &out)?,
        Command::Cv => cv(cfg, &out)?,
    }
    out.write("config.toml", cfg.to_toml())?;
    Ok(())
}

fn simulated(cfg: &RunConfig, id: ScenarioId) -> Result<Dataset, CliError> {
    Ok(match id {
        ScenarioId::Illustrative => generate_illustrative(cfg.n, cfg.seed)?,
        _ => generate(&ScenarioSpec::new(id, cfg.n, cfg.seed))?,
    })
}

/// The configured CSV, or else a draw from the configured scenario.
fn training_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match (cfg.data_path(), cfg.scenario) {
        (Some(_), _) => cfg.load_data(),
        (None, Some(id)) => simulated(cfg, id),
        (None, None) => Err(CliError::Usage(format!(
            "`{}` needs --data or --scenario",
            cfg.command
        ))),
    }
}

fn simulate(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let data = simulated(cfg, cfg.scenario()?)?;
    let mut buf = Vec::new();
    write_csv(&data, &mut buf)?;
    let path = out.write("data.csv", buf)?;
    println!(
        "wrote {} subjects to {} (censoring fraction {})",
        data.len(),
        path.display(),
        num(data.censoring_fraction())
    );
    Ok(())
}

fn train(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let data = training_data(cfg)?;
    let mut learn = cfg.learn.clone();
    learn.solver.seed = cfg.seed;
    let fitted = fit_rule(&data, cfg.criterion(), &learn)?;
    out.write("model.json", fitted.rule.to_json()?)?;
    out.write_json("fit.json", &fitted.fit)?;
    let rows: Vec<Vec<String>> = fitted
        .fit
        .trace
        .iter()
        .map(|e| {
            vec![
                e.iteration.to_string(),
                e.sample_size.to_string(),
                num(e.value_before),
                num(e.value_after),
                num(e.step_norm),
                e.active_size.to_string(),
                num(e.chosen_knot),
                num(e.ledger_gap),
            ]
        })
        .collect();
    out.write_table(
        "trace.csv",
        &[
            "iteration",
            "sample_size",
            "value_before",
            "value_after",
            "step_norm",
            "active_size",
            "chosen_knot",
            "ledger_gap",
        ],
        &rows,
    )?;
    let mut censor = Vec::new();
    fitted.censor.write_csv(&mut censor)?;
    out.write("censoring.csv", censor)?;
    println!(
        "trained {} rule on {} subjects: objective {}, inner scalar {}, {} iterations ({})",
        fitted.criterion.name(),
        data.len(),
        num(fitted.fit.objective),
        num(fitted.fit.inner_scalar),
        fitted.fit.trace.len(),
        if fitted.fit.converged {
            "converged"
        } else {
            "iteration cap"
        }
    );
    Ok(())
}

fn evaluate(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let model = cfg
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("`evaluate` needs a rule file (--model)".into()))?;
    let rule = TreatmentRule::load(model)?;
    if cfg.data_path().is_some() {
        let (Some(alpha_hat), Some(c_hat)) = (cfg.alpha_hat, cfg.c_hat) else {
            return Err(CliError::Usage(
                "IPW evaluation needs --alpha-hat and --c-hat".into(),
            ));
        };
        let data = cfg.load_data()?;
        if data.dim() != rule.model.train_x().first().map_or(0, Vec::len) {
            return Err(CliError::Data(
                "dataset and rule have different covariate counts".into(),
            ));
        }
        let s_hat = cfg.learn.censor.fit(&data)?;
        let r = evaluate_rule_ipw(
            &data,
            &rule,
            &s_hat,
            cfg.gamma,
            cfg.tau,
            alpha_hat,
            c_hat,
            cfg.learn.survival_floor,
        );
        out.write_json("report.json", &r)?;
        out.write_table(
            "report.csv",
            &["v", "v1", "m2", "gamma", "tau", "alpha_hat", "c_hat", "n"],
            &[vec![
                num(r.v),
                num(r.v1),
                num(r.m2),
                num(cfg.gamma),
                num(cfg.tau),
                num(alpha_hat),
                num(c_hat),
                data.len().to_string(),
            ]],
        )?;
        println!("V {}  V1 {}  M2 {}", num(r.v), num(r.v1), num(r.m2));
    } else {
        let id = cfg.scenario()?;
        let spec = ScenarioSpec::new(id, cfg.n, cfg.seed);
        let r = evaluate_rule_simulation(&spec, &rule, cfg.gamma, cfg.tau, cfg.n_test, cfg.seed);
        out.write_json("report.json", &r)?;
        out.write_table(
            "report.csv",
            &["v_mean", "v1", "v2", "gamma", "tau", "n_test"],
            &[vec![
                num(r.v_mean),
                num(r.v1),
                num(r.v2),
                num(r.gamma),
                num(r.tau),
                r.n_test.to_string(),
            ]],
        )?;
        println!("V {}  V1 {}  V2 {}", num(r.v_mean), num(r.v1), num(r.v2));
    }
    Ok(())
}

fn experiment(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let ecfg = ExperimentConfig {
        scenario: cfg.scenario()?,
        n: cfg.n,
        repeats: cfg.repeats,
        gamma: cfg.gamma,
        tau: cfg.tau,
        n_test: cfg.n_test,
        seed: cfg.seed,
        workers: cfg.workers,
        methods: cfg.methods.clone(),
        learn: cfg.learn.clone(),
    };
    let report = run_experiment(&ecfg)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.replication.to_string(),
                r.method.name().into(),
                num(r.v_mean),
                num(r.v1),
                num(r.v2),
                r.iterations.to_string(),
                r.converged.to_string(),
            ]
        })
        .collect();
    out.write_table(
        "replications.csv",
        &[
            "replication",
            "method",
            "v_mean",
            "v1",
            "v2",
            "iterations",
            "converged",
        ],
        &rows,
    )?;
    let summary: Vec<Vec<String>> = report
        .summaries
        .iter()
        .map(|s| {
            vec![
                s.method.name().into(),
                num(s.v_mean.mean),
                num(s.v_mean.sd),
                num(s.v1.mean),
                num(s.v1.sd),
                num(s.v2.mean),
                num(s.v2.sd),
                s.v1.count.to_string(),
            ]
        })
        .collect();
    out.write_table(
        "summary.csv",
        &[
            "method",
            "v_mean",
            "v_mean_sd",
            "v1",
            "v1_sd",
            "v2",
            "v2_sd",
            "repeats",
        ],
        &summary,
    )?;
    out.write_json("report.json", &report.summaries)?;
    if cfg.plot_data {
        let plot: Vec<Vec<String>> = report
            .plot_data()
            .iter()
            .map(|p| {
                vec![
                    p.method.name().into(),
                    p.measure.clone(),
                    num(p.stats.min),
                    num(p.stats.q1),
                    num(p.stats.median),
                    num(p.stats.q3),
                    num(p.stats.max),
                ]
            })
            .collect();
        out.write_table(
            "plot_data.csv",
            &["method", "measure", "min", "q1", "median", "q3", "max"],
            &plot,
        )?;
    }
    println!("{:<12} {:>14} {:>14} {:>14}", "method", "V", "V1", "V2");
    for s in &report.summaries {
        println!(
            "{:<12} {:>14} {:>14} {:>14}",
            s.method.name(),
            num(s.v_mean.mean),
            num(s.v1.mean),
            num(s.v2.mean)
        );
    }
    Ok(())
}

fn cv(cfg: &RunConfig, out: &OutDir) -> Result<(), CliError> {
    let data = cfg.load_data()?;
    let ccfg = CvConfig {
        folds: cfg.folds,
        repeats: cfg.repeats,
        gamma: cfg.gamma,
        tau: cfg.tau,
        seed: cfg.seed,
        workers: cfg.workers,
        methods: cfg.methods.clone(),
        learn: cfg.learn.clone(),
    };
    let report = run_cv(&data, &ccfg)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.repeat.to_string(),
                r.fold.to_string(),
                r.method.name().into(),
                num(r.v),
                num(r.v1),
                num(r.m2),
            ]
        })
        .collect();
    out.write_table(
        "folds.csv",
        &["repeat", "fold", "method", "v", "v1", "m2"],
        &rows,
    )?;
    let summary: Vec<Vec<String>> = report
        .summaries
        .iter()
        .map(|s| {
            vec![
                s.method.name().into(),
                num(s.v.mean),
                num(s.v.sd),
                num(s.v1.mean),
                num(s.v1.sd),
                num(s.m2.mean),
                num(s.m2.sd),
            ]
        })
        .collect();
    out.write_table(
        "summary.csv",
        &["method", "v", "v_sd", "v1", "v1_sd", "m2", "m2_sd"],
        &summary,
    )?;
    out.write_json("report.json", &report.summaries)?;
    println!("{:<12} {:>14} {:>14} {:>14}", "method", "V", "V1", "M2");
    for s in &report.summaries {
        println!(
            "{:<12} {:>14} {:>14} {:>14}",
            s.method.name(),
            num(s.v.mean),
            num(s.v1.mean),
            num(s.m2.mean)
        );
    }
    Ok(())
}
