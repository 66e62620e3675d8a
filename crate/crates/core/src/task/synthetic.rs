//! Seeded synthetic suites with planted critical tools. These are the ground
//! truth the intersection pipeline is checked against.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ParamSpec, ParamType, Task, TaskError, ToolSpec};

const VERBS: &[&str] = &[
    "search", "get", "create", "update", "delete", "list", "convert", "send", "book", "cancel",
    "lookup", "translate", "compute", "validate", "schedule", "fetch",
];
const NOUNS: &[&str] = &[
    "flights", "hotel", "weather", "invoice", "payment", "order", "user", "calendar", "email",
    "stock", "recipe", "route", "currency", "ticket", "playlist", "document",
];

/// Suffix marking a functional clone of another tool.
pub(crate) const CLONE_SUFFIX: &str = "_v2";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSuiteSpec {
    pub task_count: usize,
    pub pool_size: usize,
    pub critical_count: usize,
    /// Interchangeable clone pairs placed on non-critical tools.
    pub redundant_pairs: usize,
    /// Number of critical tools per task that also get a clone. Non-zero
    /// values make some planted tools replaceable, which the intersection
    /// heuristic cannot see.
    #[serde(default)]
    pub critical_clones: usize,
    pub seed: u64,
    #[serde(default = "default_dataset")]
    pub dataset_id: String,
}

fn default_dataset() -> String {
    "synthetic".to_string()
}

impl SyntheticSuiteSpec {
    pub fn new(task_count: usize, pool_size: usize, critical_count: usize, redundant_pairs: usize, seed: u64) -> Self {
        Self {
            task_count,
            pool_size,
            critical_count,
            redundant_pairs,
            critical_clones: 0,
            seed,
            dataset_id: default_dataset(),
        }
    }

    pub fn with_critical_clones(mut self, n: usize) -> Self {
        self.critical_clones = n;
        self
    }

    fn check(&self) -> Result<(), TaskError> {
        let err = |m: String| Err(TaskError::SyntheticSpec(m));
        if self.task_count == 0 {
            return err("task_count must be positive".into());
        }
        if self.critical_count == 0 || self.critical_count >= self.pool_size {
            return err(format!(
                "need 0 < critical_count < pool_size, got {} and {}",
                self.critical_count, self.pool_size
            ));
        }
        if self.critical_clones > self.critical_count {
            return err("critical_clones exceeds critical_count".into());
        }
        let needed = self.critical_count + self.critical_clones + 2 * self.redundant_pairs;
        if needed > self.pool_size {
            return err(format!(
                "pool_size {} cannot hold {} critical, {} critical clones and {} redundant pairs",
                self.pool_size, self.critical_count, self.critical_clones, self.redundant_pairs
            ));
        }
        Ok(())
    }
}

/// Capability groups a task's solution needs. Any one member of a group
/// satisfies it; groups of size > 1 are clone sets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub required: Vec<Vec<String>>,
    #[serde(default)]
    pub optional: Vec<Vec<String>>,
}

impl SyntheticGroundTruth {
    pub const KEY: &'static str = "solution_path";

    pub fn from_task(task: &Task) -> Option<Self> {
        let v = task.ground_truth.as_ref()?.get(Self::KEY)?;
        serde_json::from_value(v.clone()).ok()
    }

    pub fn to_ground_truth(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([(
            Self::KEY.to_string(),
            serde_json::to_value(self).expect("ground truth serializes"),
        )])
    }

    /// Tools whose removal alone removes a required capability.
    pub fn indispensable(&self) -> BTreeSet<String> {
        self.required
            .iter()
            .filter(|g| g.len() == 1)
            .map(|g| g[0].clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSuite {
    pub tasks: Vec<Task>,
    /// task_id → planted critical tools (the first member of every
    /// required group).
    pub planted: BTreeMap<String, BTreeSet<String>>,
}

fn random_params(rng: &mut ChaCha8Rng) -> BTreeMap<String, ParamSpec> {
    const NAMES: &[&str] = &["query", "id", "amount", "date", "mode", "limit", "filters", "items"];
    let count = rng.gen_range(1..=2);
    let mut out = BTreeMap::new();
    while out.len() < count {
        let name = NAMES[rng.gen_range(0..NAMES.len())];
        let spec = match name {
            "amount" | "limit" => ParamSpec::new(ParamType::Number, true),
            "mode" => ParamSpec {
                allowed: vec!["fast".into(), "exact".into()],
                ..ParamSpec::new(ParamType::Enum, rng.gen_bool(0.5))
            },
            "filters" => ParamSpec::new(ParamType::Object, false),
            "items" => ParamSpec::new(ParamType::Array, false),
            _ => ParamSpec::new(ParamType::String, true),
        };
        out.insert(name.to_string(), spec);
    }
    out
}

fn base_names(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut combos: Vec<String> = VERBS
        .iter()
        .flat_map(|v| NOUNS.iter().map(move |n| format!("{v}_{n}")))
        .collect();
    combos.shuffle(rng);
    (0..count)
        .map(|i| {
            let base = &combos[i % combos.len()];
            match i / combos.len() {
                0 => base.clone(),
                round => format!("{base}_{round}"),
            }
        })
        .collect()
}

fn make_tool(rng: &mut ChaCha8Rng, name: &str) -> ToolSpec {
    let (verb, noun) = name.split_once('_').unwrap_or((name, "item"));
    ToolSpec {
        name: name.to_string(),
        description: format!("{verb} {}", noun.replace('_', " ")),
        parameters: random_params(rng),
    }
}

fn clone_of(tool: &ToolSpec) -> ToolSpec {
    ToolSpec {
        name: format!("{}{CLONE_SUFFIX}", tool.name),
        ..tool.clone()
    }
}

pub fn generate_synthetic_suite(spec: &SyntheticSuiteSpec) -> Result<SyntheticSuite, TaskError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let singletons =
        spec.pool_size - spec.critical_count - spec.critical_clones - 2 * spec.redundant_pairs;
    let width = spec.task_count.to_string().len().max(3);

    let mut tasks = Vec::with_capacity(spec.task_count);
    let mut planted = BTreeMap::new();
    for i in 0..spec.task_count {
        let names = base_names(&mut rng, spec.critical_count + spec.redundant_pairs + singletons);
        let tools: Vec<ToolSpec> = names.iter().map(|n| make_tool(&mut rng, n)).collect();
        let (critical, rest) = tools.split_at(spec.critical_count);
        let (paired, single) = rest.split_at(spec.redundant_pairs);

        let mut pool: Vec<ToolSpec> = Vec::with_capacity(spec.pool_size);
        let mut required = Vec::new();
        for (j, c) in critical.iter().enumerate() {
            pool.push(c.clone());
            if j < spec.critical_clones {
                let cl = clone_of(c);
                required.push(vec![c.name.clone(), cl.name.clone()]);
                pool.push(cl);
            } else {
                required.push(vec![c.name.clone()]);
            }
        }
        let mut optional = Vec::new();
        for o in paired {
            let cl = clone_of(o);
            optional.push(vec![o.name.clone(), cl.name.clone()]);
            pool.push(o.clone());
            pool.push(cl);
        }
        for o in single {
            optional.push(vec![o.name.clone()]);
            pool.push(o.clone());
        }
        pool.shuffle(&mut rng);

        let task_id = format!("syn-{:0width$}", i + 1);
        let capabilities: Vec<&str> = critical.iter().map(|c| c.description.as_str()).collect();
        let gt = SyntheticGroundTruth { required, optional };
        planted.insert(
            task_id.clone(),
            critical.iter().map(|c| c.name.clone()).collect::<BTreeSet<_>>(),
        );
        tasks.push(Task {
            task_id,
            dataset_id: spec.dataset_id.clone(),
            query: format!(
                "Request {}: {} and report the combined result.",
                i + 1,
                capabilities.join(", then ")
            ),
            tool_pool: pool,
            ground_truth: Some(gt.to_ground_truth()),
            metadata: BTreeMap::from([("generator_seed".to_string(), spec.seed.to_string())]),
        });
    }
    Ok(SyntheticSuite { tasks, planted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{validate_task, write_dataset};

    #[test]
    fn single_task_contract() {
        let suite = generate_synthetic_suite(&SyntheticSuiteSpec::new(1, 5, 2, 0, 7)).unwrap();
        assert_eq!(suite.tasks.len(), 1);
        let task = &suite.tasks[0];
        let planted = &suite.planted[&task.task_id];
        assert_eq!(planted.len(), 2);
        assert!(planted.is_subset(&task.tool_names()));
        assert_eq!(task.tool_pool.len(), 5);
        assert!(validate_task(task).is_ok());
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SyntheticSuiteSpec::new(20, 8, 2, 1, 7);
        let a = generate_synthetic_suite(&spec).unwrap();
        let b = generate_synthetic_suite(&spec).unwrap();
        assert_eq!(write_dataset(&a.tasks), write_dataset(&b.tasks));
        let c = generate_synthetic_suite(&SyntheticSuiteSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(write_dataset(&a.tasks), write_dataset(&c.tasks));
    }

    #[test]
    fn redundant_pairs_only_touch_non_critical_tools() {
        let suite = generate_synthetic_suite(&SyntheticSuiteSpec::new(50, 8, 2, 1, 3)).unwrap();
        for task in &suite.tasks {
            let gt = SyntheticGroundTruth::from_task(task).unwrap();
            assert!(gt.required.iter().all(|g| g.len() == 1));
            assert_eq!(gt.optional.iter().filter(|g| g.len() == 2).count(), 1);
            assert_eq!(gt.indispensable(), suite.planted[&task.task_id]);
            let clone = gt.optional.iter().find(|g| g.len() == 2).unwrap();
            let (a, b) = (task.tool(&clone[0]).unwrap(), task.tool(&clone[1]).unwrap());
            assert_eq!(a.description, b.description);
            assert_eq!(a.parameters, b.parameters);
        }
    }

    #[test]
    fn critical_clones_shrink_indispensable_set() {
        let spec = SyntheticSuiteSpec::new(5, 8, 2, 0, 1).with_critical_clones(1);
        let suite = generate_synthetic_suite(&spec).unwrap();
        for task in &suite.tasks {
            let gt = SyntheticGroundTruth::from_task(task).unwrap();
            assert_eq!(gt.indispensable().len(), 1);
            assert_eq!(suite.planted[&task.task_id].len(), 2);
        }
    }

    #[test]
    fn spec_violations_rejected() {
        for spec in [
            SyntheticSuiteSpec::new(1, 3, 3, 0, 0),
            SyntheticSuiteSpec::new(0, 3, 1, 0, 0),
            SyntheticSuiteSpec::new(1, 4, 2, 2, 0),
            SyntheticSuiteSpec::new(1, 4, 1, 0, 0).with_critical_clones(2),
        ] {
            assert!(matches!(
                generate_synthetic_suite(&spec),
                Err(TaskError::SyntheticSpec(_))
            ));
        }
    }

    #[test]
    fn large_pools_keep_unique_names() {
        let suite = generate_synthetic_suite(&SyntheticSuiteSpec::new(1, 300, 3, 0, 2)).unwrap();
        assert!(validate_task(&suite.tasks[0]).is_ok());
    }
}
