//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Randomized parts are seeded from `BLINDSIM_SEED`.

mod acceptance {
    pub mod brr;
    pub mod common;
    pub mod invariants;
    pub mod reclaim;
    pub mod rule_table;
}

use std::process::ExitCode;
use std::time::{Duration, Instant};

use acceptance::{brr, invariants, reclaim, rule_table};
use blindcap::ir::{compile, LowerOptions};
use blindcap::machine::rules::FaultKind;
use blindcap::machine::{Mode, RunOutcome};
use blindcap::trace::NoTrace;
use blindsim::bench::{measure, overhead, ratio_table, Measurement};
use blindsim::cli::seed;
use blindsim::corpus::Bench;
use blindsim::gadgets::{spectre, Variant};
use blindsim::ni::compare_runs;
use blindsim::progen::ir_program;
use blindsim::soundness;
use blindsim::toolchain::{build, Config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

const SELECT: &str = "
fn select(int cond, int x, int y) @blinded {
    @blinded int c;
    int res;
    c = cond;
    res = (x * c) + (y * (!c));
    return res;
}

fn main() {
    int cond = input();
    int x = input();
    int y = input();
    @result int r[1];
    r[0] = select(cond, x, y);
    out(r[0]);
}
";

const BAD_FUNC: &str = "
fn bad_func(int cond, int x, int* dst) {
    @blinded int a = x;
    int b;
    if (cond)
        b = a;
    *dst = a;
    if (a != 0)
        b = a;
    else
        return;
    if (b != 0)
        *dst = a;
}

fn main() {
    int* p = bmalloc(1);
    bad_func(input(), 7, p);
    free(p);
}
";

/// Line of `if (a != 0)` in `BAD_FUNC`.
const SECRET_BRANCH_LINE: u32 = 8;

fn examples() -> Outcome {
    let on = LowerOptions { blinding: true, mode: Mode::Purecap };
    let b = build(SELECT, on).map_err(|d| format!("select rejected: {d:?}"))?;
    if !b.compiled.analysis.diagnostics.is_empty() {
        return Err(format!("select diagnostics: {:?}", b.compiled.analysis.diagnostics));
    }
    let mut m = b.boot();
    m.push_public([1, 5, 9]);
    let o = m.run(100_000, &mut NoTrace);
    if o != RunOutcome::Halted || m.output() != [5] {
        return Err(format!("select gave {o:?} {:?}", m.output()));
    }

    let ds = match compile(BAD_FUNC, on) {
        Ok(_) => return Err("bad_func accepted".into()),
        Err(ds) => ds,
    };
    let first = ds.iter().find(|d| d.is_error()).unwrap();
    if (first.code, first.pos.line) != ("E_BLINDED_BRANCH", SECRET_BRANCH_LINE) {
        return Err(format!("bad_func first error is {} at line {}", first.code, first.pos.line));
    }

    // Drop the rejected `if (a != 0) ... else return;`.
    let trimmed: String = BAD_FUNC
        .lines()
        .enumerate()
        .filter(|(i, _)| !(SECRET_BRANCH_LINE as usize..SECRET_BRANCH_LINE as usize + 4).contains(&(i + 1)))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    let b = build(&trimmed, on).map_err(|d| format!("trimmed bad_func rejected: {d:?}"))?;
    let warned = b.warnings().any(|d| d.code == "W_MAYBE_BLINDED_BRANCH");
    let entry = b.compiled.lowered.entries["bad_func"];
    let main = b.compiled.lowered.entries["main"];
    let mut m = b.boot();
    m.push_public([1]);
    let faulted = match m.run(100_000, &mut NoTrace) {
        RunOutcome::Fault(f) => f.kind == FaultKind::BlindedBranchCondition && (entry..main.max(entry + 1_000)).contains(&f.index),
        _ => false,
    };
    let mut m = b.boot();
    m.push_public([0]);
    let completed = m.run(100_000, &mut NoTrace) == RunOutcome::Halted;
    if !(warned && faulted && completed) {
        return Err(format!("trimmed bad_func: warned={warned} faulted={faulted} completed={completed}"));
    }
    Ok("select prints 5; bad_func rejected at line 8, runtime fault only when cond=1".into())
}

fn non_interference(seed: u64) -> Outcome {
    let start = Instant::now();
    let mut jobs = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4);
    for b in Bench::ALL {
        for n in [8u32, 10, 12] {
            for _ in 0..10 {
                jobs.push((b, n, b.secrets(n, &mut rng), b.secrets(n, &mut rng)));
            }
        }
    }
    let builds: Vec<_> = Bench::ALL
        .iter()
        .flat_map(|&b| [8u32, 10, 12].map(move |n| (b, n)))
        .map(|(b, n)| ((b, n), build(&b.source(n), Config::PurecapBlinded.options()).expect("corpus builds")))
        .collect();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).min(16);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let failures: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut bad = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        let Some((b, n, sa, sb)) = jobs.get(i) else { break };
                        let build = &builds.iter().find(|(k, _)| *k == (*b, *n)).unwrap().1;
                        let (mut ma, mut mb) = (build.boot(), build.boot());
                        ma.push_secret(sa.iter().copied());
                        mb.push_secret(sb.iter().copied());
                        let r = compare_runs(ma, mb, blindcap::spec::DEFAULT_WINDOW, 1 << 32);
                        if !r.verdict.is_identical() || r.outcome_a != RunOutcome::Halted || r.outcome_b != RunOutcome::Halted {
                            bad.push(format!("{} N={n}: {:?} {:?}/{:?}", b.name(), r.verdict, r.outcome_a, r.outcome_b));
                        }
                    }
                    bad
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let took = start.elapsed();
    if let Some(f) = failures.first() {
        return Err(format!("{} of {} pairs differ, first: {f}", failures.len(), jobs.len()));
    }
    if took > Duration::from_secs(300) {
        return Err(format!("all identical but took {took:.1?}"));
    }
    Ok(format!("{} pairs identical in {:.1?}", jobs.len(), took))
}

fn spectre_table() -> Outcome {
    let cases = [
        (Variant::Pht, true, Mode::Purecap, false),
        (Variant::Btb, true, Mode::Purecap, false),
        (Variant::Pht, false, Mode::Purecap, true),
        (Variant::PhtOob, false, Mode::Purecap, false),
    ];
    let mut got = Vec::new();
    for (v, enforce, mode, want) in cases {
        let r = spectre(v, enforce, mode);
        if r.leaked != want {
            return Err(format!("{v} enforce={enforce} mode={mode}: leaked={} expected {want}\n{r}", r.leaked));
        }
        if r.runs.0.stats.mispredictions == 0 {
            return Err(format!("{v}: the attack never mispredicted"));
        }
        got.push(format!("{v}/{}={}", if enforce { "on" } else { "off" }, r.leaked));
    }
    let bare = spectre(Variant::PhtOob, false, Mode::Bare).leaked;
    Ok(format!("leaked: {} (bare-mode bounds bypass leaks: {bare})", got.join(" ")))
}

fn overhead_accounting(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x8);
    let mut lines = Vec::new();
    let mut table = String::new();
    for n in [8u32, 10] {
        let mut rows: Vec<Measurement> = Vec::new();
        for b in Bench::ALL {
            let secrets = b.secrets(n, &mut rng);
            for c in Config::ALL {
                let m = measure(b, n, c, &secrets).map_err(|e| e.to_string())?;
                if m.outcome != RunOutcome::Halted || m.output != b.expected(n, &secrets) {
                    return Err(format!("{} {} N={n}: {:?}", b.name(), c.name(), m.outcome));
                }
                rows.push(m);
            }
            let k = rows.len();
            let o = overhead(&rows[k - 1], &rows[k - 2]);
            if !o.exact() {
                return Err(format!("{} N={n}: predicted {} measured {}", b.name(), o.predicted, o.measured));
            }
            lines.push(format!("{}@{n}={}", b.name(), o.predicted));
        }
        if n == 8 {
            table = ratio_table(&rows);
        }
    }
    for l in table.lines() {
        println!("    {l}");
    }
    Ok(format!("exact for all 10 runs ({})", lines.join(" ")))
}

fn compiler_soundness(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9);
    let mut checked = 0;
    let mut sites = 0;
    let mut clean = 0;
    let mut rejected = 0;
    let mut runs: Vec<(String, blindsim::toolchain::Build, Vec<u64>, Vec<u64>)> = Vec::new();
    for b in Bench::ALL {
        let secrets = b.secrets(8, &mut rng);
        runs.push((b.name().into(), build(&b.source(8), Config::PurecapBlinded.options()).unwrap(), vec![], secrets));
    }
    for i in 0..200 {
        let src = ir_program(&mut rng);
        match build(&src, Config::PurecapBlinded.options()) {
            Ok(bld) => {
                let secrets = (0..8).map(|_| rng.gen_range(0..64)).collect();
                let public = (0..64).map(|_| rng.gen_range(0..64)).collect();
                runs.push((format!("generated #{i}"), bld, public, secrets));
            }
            Err(_) => rejected += 1,
        }
    }
    for (name, bld, public, secrets) in &runs {
        let r = soundness::check(bld, public, secrets, 50_000_000);
        checked += 1;
        sites += r.sites_checked;
        if let Some(v) = r.violations.first() {
            return Err(format!("{name}: unblinded-level site holds a blinded value: {v:?}"));
        }
        let no_diagnostics = bld.compiled.analysis.diagnostics.is_empty();
        if no_diagnostics {
            clean += 1;
            if let Some(f) = r.blindedness_fault() {
                return Err(format!("{name}: built without diagnostics but faulted with {f}"));
            }
        }
        if r.outcome == RunOutcome::StepLimitExceeded {
            return Err(format!("{name}: did not finish"));
        }
    }
    Ok(format!("{checked} runs ({clean} without diagnostics, {rejected} generated programs rejected), {sites} sites checked"))
}

fn main() -> ExitCode {
    let seed = seed();
    println!("acceptance (BLINDSIM_SEED={seed})");
    let criteria: [Criterion; 9] = [
        ("blindedness rule table", Box::new(rule_table::run)),
        ("invariants I1-I5", Box::new(move || invariants::run(seed))),
        ("example programs", Box::new(examples)),
        ("non-interference", Box::new(move || non_interference(seed))),
        ("Spectre gadgets", Box::new(spectre_table)),
        ("reclaim hygiene", Box::new(move || reclaim::run(seed))),
        ("BRR round trip", Box::new(move || brr::run(seed))),
        ("overhead accounting", Box::new(move || overhead_accounting(seed))),
        ("compiler soundness", Box::new(move || compiler_soundness(seed))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = f();
        let took = start.elapsed();
        match r {
            Ok(msg) => println!("criterion {}: PASS {name} [{took:.2?}] {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name} [{took:.2?}] {msg}", i + 1);
            }
        }
    }
    println!("note: overhead ratios are emulator instruction counts, not wall-clock time");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
