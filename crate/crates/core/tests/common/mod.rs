//! Synthetic benchmark shared by the slow integration targets: 200 users,
//! 500 items, density 0.02, MF teacher d=64 and student d=8.

#![allow(dead_code)]

use pckd::backbone::Checkpoint;
use pckd::data::{chrono_split, generate_synthetic, preprocess, Dataset, SplitRatios};
use pckd::trainer::{distill, train_teacher, DistillMethod, RunConfig, RunOutcome};

pub const SEEDS: [u64; 3] = [1, 2, 3];

pub fn benchmark_dataset(seed: u64) -> Dataset {
    let log = generate_synthetic(200, 500, 8, 0.02, seed).expect("synthetic log");
    let (log, _) = preprocess(&log, 1).expect("preprocess");
    chrono_split(&log, SplitRatios::default()).expect("split")
}

pub fn benchmark_config(seed: u64, method: DistillMethod) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = Some(seed);
    c.method = method;
    c.d_teacher = 64;
    c.d_student = 8;
    c.lr = 0.01;
    c.max_epochs = 200;
    c.patience = 60;
    c.pckd.t = 30.0;
    c.pckd.lambda_de = 3e-4;
    c.pckd.lambda_pckd = 0.5;
    c
}

pub struct SeedRuns {
    pub seed: u64,
    pub dataset: Dataset,
    pub teacher: Checkpoint,
    pub student: RunOutcome,
    pub de: RunOutcome,
    pub pckd_l: RunOutcome,
    pub pckd_l_random: RunOutcome,
}

pub fn run_seed(seed: u64) -> SeedRuns {
    let dataset = benchmark_dataset(seed);
    let teacher = train_teacher(&benchmark_config(seed, DistillMethod::None), &dataset)
        .expect("teacher")
        .checkpoint;
    let run = |method, random: bool| {
        let mut c = benchmark_config(seed, method);
        if random {
            c.set("sampling", "random").unwrap();
        }
        distill(&c, &dataset, Some(&teacher)).expect("distill")
    };
    SeedRuns {
        seed,
        student: run(DistillMethod::None, false),
        de: run(DistillMethod::De, false),
        pckd_l: run(DistillMethod::PckdL, false),
        pckd_l_random: run(DistillMethod::PckdL, true),
        dataset,
        teacher,
    }
}

pub fn test_ndcg20(o: &RunOutcome) -> f64 {
    o.test.as_ref().and_then(|t| t.ndcg(20)).expect("test metrics")
}

pub fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}
