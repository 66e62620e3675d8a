//! The whole workflow through the library entry points the binary uses:
//! generate a planted suite, run the construction roster, build the
//! infeasible suite, run the evaluation roster on both suites, and score.
//!
//! ```bash
//! cargo run --example synthetic_pipeline
//! ```

use toolstop::critical::RetentionPolicy;
use toolstop::pipeline::{
    cmd_build_infeasible, cmd_evaluate, cmd_gen_synthetic, cmd_run, BuildOptions, EvaluateOptions,
    GenSyntheticOptions, OracleKind, PipelineConfig, RunOptions,
};
use toolstop::task::{DatasetFormat, SyntheticSuiteSpec};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let out = dir.path();
    let gen = cmd_gen_synthetic(&GenSyntheticOptions {
        spec: SyntheticSuiteSpec::new(40, 8, 2, 1, 7),
        roster_size: 3,
        extras: 1,
        out_dir: out.to_path_buf(),
    })?;
    println!("generated {} tasks", gen.tasks);

    let run = |dataset: &std::path::Path, roster: &std::path::Path, out_dir: &std::path::Path| {
        cmd_run(&RunOptions {
            dataset: dataset.to_path_buf(),
            format: DatasetFormat::Canonical,
            config: PipelineConfig::load(roster)?,
            out_dir: out_dir.to_path_buf(),
            jobs: 2,
            seed: 7,
        })
    };
    let m = run(&gen.tasks_file, &gen.roster_file, out)?;
    println!("{}: {} traces", m.run_id, m.executed);

    let suite = out.join("infeasible.json");
    let built = cmd_build_infeasible(&BuildOptions {
        traces_dir: out.join("traces"),
        dataset: gen.tasks_file.clone(),
        format: DatasetFormat::Canonical,
        roster: None,
        policy: RetentionPolicy::default(),
        planted: Some(gen.planted_file.clone()),
        out: suite.clone(),
    })?;
    println!("retained {}/{}", built.log.retained, built.log.source_tasks);
    if let Some(r) = &built.log.recovery {
        println!("{r}");
    }

    let eval = out.join("eval");
    for dataset in [&gen.tasks_file, &suite] {
        run(dataset, &gen.eval_roster_file, &eval)?;
    }
    let summary = cmd_evaluate(&EvaluateOptions {
        suites: vec![gen.tasks_file.clone(), suite],
        traces_dir: eval.join("traces"),
        oracle: OracleKind::TraceOutcome,
        out_dir: eval.clone(),
    })?;
    println!("\n{}", summary.report.render_text());
    Ok(())
}
