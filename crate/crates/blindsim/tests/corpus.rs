use blindcap::machine::RunOutcome;
use blindcap::trace::NoTrace;
use blindsim::corpus::Bench;
use blindsim::toolchain::{build, Config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn corpus_matches_oracles_in_every_config() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for bench in Bench::ALL {
        let n = 6;
        let src = bench.source(n);
        let secrets = bench.secrets(n, &mut rng);
        let want = bench.expected(n, &secrets);
        for cfg in Config::ALL {
            let b = build(&src, cfg.options()).unwrap_or_else(|d| panic!("{} {cfg:?}: {d:?}", bench.name()));
            assert_eq!(b.warnings().count(), 0, "{}: {:?}", bench.name(), b.compiled.analysis.diagnostics);
            let mut m = b.boot();
            m.push_secret(secrets.iter().copied());
            let out = m.run(50_000_000, &mut NoTrace);
            assert_eq!(out, RunOutcome::Halted, "{} {cfg:?}", bench.name());
            assert_eq!(m.output(), &want[..], "{} {cfg:?}", bench.name());
        }
    }
}
