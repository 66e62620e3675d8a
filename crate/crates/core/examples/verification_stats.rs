//! Planning the human check of a constructed suite and summarizing the
//! annotators' verdicts.
//!
//! ```bash
//! cargo run --example verification_stats
//! ```

use std::collections::BTreeMap;

use toolstop::stats::{
    cochran_sample_size, proportional_allocation, wilson_interval, AgreementTable, Judgment, JudgmentRecord,
    StatsReport,
};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let strata: BTreeMap<String, u64> = [("bfcl", 445), ("stabletoolbench", 300), ("api-bank", 184), ("tau-bench", 107)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let population: u64 = strata.values().sum();
    let plan = cochran_sample_size(population, 0.95, 0.05, 0.5)?;
    println!("N = {population}: n0 = {:.2}, with FPC {:.2}, n = {}", plan.n0, plan.n_fpc, plan.n);
    let plan = plan.with_override(283)?.with_allocation(&strata)?;
    println!("n = {} (formula gave {:?}), allocation {:?}", plan.n, plan.overridden_from, plan.allocation);
    println!("direct allocation of 283: {:?}\n", proportional_allocation(283, &strata)?);

    for (k, n) in [(115, 121), (268, 283), (0, 10)] {
        println!("{k:>3}/{n:<3} {}", wilson_interval(k, n, 0.95)?);
    }

    let table = AgreementTable::new(90, 2, 3, 5);
    println!(
        "\nagreement {:.3}, kappa {:.3}, AC1 {:.3}",
        table.raw_agreement()?,
        table.cohen_kappa()?,
        table.gwet_ac1()?
    );

    let judge = |id: &str, j: Judgment| JudgmentRecord {
        task_id: id.into(),
        judgment: j,
        note: String::new(),
    };
    use Judgment::{Critical as C, Substitutable as S};
    let first = vec![judge("a", C), judge("b", C), judge("c", C), judge("d", S), judge("e", C)];
    let second = vec![judge("a", C), judge("b", C), judge("c", S), judge("d", S), judge("e", C)];
    let datasets: BTreeMap<String, String> = [("a", "bfcl"), ("b", "bfcl"), ("c", "tau-bench"), ("d", "tau-bench"), ("e", "tau-bench")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    println!();
    print!("{}", StatsReport::build(&first, &second, Some(&datasets), 0.95)?.render_text());
    Ok(())
}
