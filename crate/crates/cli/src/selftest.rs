//! Oracle suites: fast evaluators against brute force on random inputs.

use std::fmt::Write as _;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lacunary::diophantine::{brute_force_count, count_solutions, DiophQuery};
use lacunary::discrepancy::{brute_force_discrepancy, PointSet, BRUTE_FORCE_LIMIT};
use lacunary::sequences::{gen_power_minus_one, gen_superlacunary, IntegerSequence};

use crate::output::Output;
use crate::{runtime, CliError, SelftestArgs};

const TOLERANCE: f64 = 1e-12;
const QUERY_PREFIX: usize = 300;

struct Suite {
    name: &'static str,
    cases: usize,
    failures: usize,
    first_failure: Option<String>,
}

impl Suite {
    fn fail(&mut self, what: String) {
        self.failures += 1;
        self.first_failure.get_or_insert(what);
    }
}

fn discrepancy_suite(rng: &mut ChaCha8Rng, sets: usize) -> Result<Suite, CliError> {
    let mut suite = Suite {
        name: "discrepancy",
        cases: sets,
        failures: 0,
        first_failure: None,
    };
    for case in 0..sets {
        let n = rng.random_range(1..=BRUTE_FORCE_LIMIT.min(12));
        // coarse values force ties and shared endpoints
        let points: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.25) {
                    rng.random_range(0..16) as f64 / 16.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let set = PointSet::new(points).map_err(runtime)?;
        let fast = set.discrepancy();
        let slow = brute_force_discrepancy(&set).map_err(runtime)?;
        let diff = (fast.star - slow.star).abs().max((fast.extreme - slow.extreme).abs());
        if diff > TOLERANCE {
            suite.fail(format!("set {case}: {:?} differs by {diff:e}", set.points()));
        }
    }
    Ok(suite)
}

fn diophantine_suite(rng: &mut ChaCha8Rng, queries: usize) -> Result<Suite, CliError> {
    let sequences: [IntegerSequence; 2] = [
        gen_power_minus_one(2, QUERY_PREFIX).map_err(runtime)?,
        gen_superlacunary(QUERY_PREFIX).map_err(runtime)?,
    ];
    let mut suite = Suite {
        name: "diophantine",
        cases: queries,
        failures: 0,
        first_failure: None,
    };
    for case in 0..queries {
        let seq = &sequences[case % 2];
        let mut coefficient = || {
            let v = rng.random_range(1..=4i64);
            if rng.random_bool(0.5) {
                -v
            } else {
                v
            }
        };
        let (a, b) = (coefficient(), coefficient());
        let n = rng.random_range(1..=seq.len());
        let c = if rng.random_bool(0.5) {
            BigInt::from(rng.random_range(-20..=20i64))
        } else {
            let k = rng.random_range(1..=n);
            let l = rng.random_range(1..=n);
            BigInt::from(seq.term(k).map_err(runtime)?) * a + BigInt::from(seq.term(l).map_err(runtime)?) * b
        };
        let q = DiophQuery::new(a, b, c, n).map_err(runtime)?;
        let fast = count_solutions(seq, &q).map_err(runtime)?;
        let slow = brute_force_count(seq, &q).map_err(runtime)?;
        if fast != slow {
            suite.fail(format!("query {case} on {} (a={a}, b={b}, N={n}): {fast:?} vs {slow:?}", seq.generator()));
        }
    }
    Ok(suite)
}

pub fn run(args: &SelftestArgs, out: &mut Output) -> Result<u8, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let suites = [
        discrepancy_suite(&mut rng, args.sets)?,
        diophantine_suite(&mut rng, args.queries)?,
    ];
    let mut csv = String::from("suite,cases,failures\n");
    let mut failed = false;
    for s in &suites {
        writeln!(csv, "{},{},{}", s.name, s.cases, s.failures).unwrap();
        let verdict = if s.failures == 0 { "ok" } else { "FAILED" };
        println!("{}: {} cases, {} failures: {verdict}", s.name, s.cases, s.failures);
        if let Some(f) = &s.first_failure {
            println!("  first failure: {f}");
        }
        failed |= s.failures > 0;
    }
    out.manifest("selftest", &format!("{args:?}"), Some(args.seed));
    out.csv("selftest.csv", csv)?;
    Ok(u8::from(failed))
}
