use blindcap::ir::{compile, LowerOptions};
use blindcap::machine::asm::assemble;
use blindcap::machine::rules::FaultKind;
use blindcap::machine::{Machine, MachineConfig, Mode, RunOutcome};
use blindcap::trace::NoTrace;

fn build(src: &str, opts: LowerOptions) -> Machine {
    let c = compile(src, opts).unwrap_or_else(|d| panic!("{d:?}"));
    let p = assemble(&c.lowered.asm).unwrap_or_else(|e| panic!("{e:?}\n{}", c.lowered.asm));
    let cfg = MachineConfig { mode: opts.mode, enforce: opts.blinding, ..MachineConfig::default() };
    Machine::from_program(p, cfg).unwrap()
}

fn on() -> LowerOptions {
    LowerOptions { blinding: true, mode: Mode::Purecap }
}

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
}";

#[test]
fn oblivious_select_declassifies_through_result() {
    for (cond, want) in [(1, 5), (0, 9)] {
        let mut m = build(SELECT, on());
        m.push_public([cond, 5, 9]);
        assert_eq!(m.run(100_000, &mut NoTrace), RunOutcome::Halted, "{:?}", m.fault());
        assert_eq!(m.output(), &[want]);
    }
}

const LEAKY: &str = "
fn bad_func(int cond, int x, int* dst) {
    @blinded int a = x;
    int b;
    if (cond)
        b = a;
    *dst = a;
    if (b != 0)
        *dst = a;
}
fn main() {
    int* p = bmalloc(1);
    bad_func(input(), 7, p);
}";

#[test]
fn maybe_blinded_branch_faults_only_on_blinded_path() {
    let mut m = build(LEAKY, on());
    m.push_public([1]);
    match m.run(100_000, &mut NoTrace) {
        RunOutcome::Fault(f) => assert_eq!(f.kind, FaultKind::BlindedBranchCondition),
        other => panic!("{other:?}"),
    }
    let mut m = build(LEAKY, on());
    m.push_public([0]);
    assert_eq!(m.run(100_000, &mut NoTrace), RunOutcome::Halted, "{:?}", m.fault());
}

const LOOPS: &str = "
int g[4] = {3, 1, 4, 1};
fn sum(int* a, int n) {
    int s = 0;
    for (int i = 0; i < n; i = i + 1) s = s + a[i];
    return s;
}
fn main() {
    int t[3];
    t[0] = 10; t[1] = 20; t[2] = -5;
    out(sum(t, 3) + sum(g, 4));
    out(select(3 > 2, 1, 2) * 100 + (7 == 7) + (1 << 3) + (-8 >> 1));
}";

#[test]
fn plain_code_agrees_across_configurations() {
    let configs = [
        on(),
        LowerOptions { blinding: false, mode: Mode::Purecap },
        LowerOptions { blinding: false, mode: Mode::Bare },
    ];
    for opts in configs {
        let mut m = build(LOOPS, opts);
        assert_eq!(m.run(100_000, &mut NoTrace), RunOutcome::Halted, "{opts:?} {:?}", m.fault());
        assert_eq!(m.output(), &[34, 100 + 1 + 8 - 4], "{opts:?}");
    }
}

#[test]
fn secret_array_sum_is_oblivious() {
    let src = "
        fn main() {
            int* s = bmalloc(4);
            input_blinded(s, 4);
            @result int r[1];
            int acc[1];
            for (int i = 0; i < 4; i = i + 1) acc[0] = acc[0] + s[i];
            r[0] = acc[0];
            out(r[0]);
            free(s);
        }";
    let mut m = build(src, on());
    m.push_secret([1, 2, 3, 4]);
    assert_eq!(m.run(100_000, &mut NoTrace), RunOutcome::Halted, "{:?}", m.fault());
    assert_eq!(m.output(), &[10]);
    assert!(m.zeroized_bytes() > 0);
}

#[test]
fn blinding_overhead_matches_plan() {
    let src = "
        fn f(int v) { @blinded int k = v; int w[3]; w[0] = k; return 0; }
        fn main() { for (int i = 0; i < 5; i = i + 1) f(i); }";
    let run = |blinding| {
        let opts = LowerOptions { blinding, mode: Mode::Purecap };
        let c = compile(src, opts).unwrap();
        let mut m = build(src, opts);
        assert_eq!(m.run(100_000, &mut NoTrace), RunOutcome::Halted);
        (m.counters().retired, c.plan)
    };
    let (with, plan) = run(true);
    let (without, _) = run(false);
    assert_eq!(with - without, 5 * plan.functions["f"].blinding_cost());
    assert_eq!(plan.functions["f"].blinding_cost(), (2 + 6) + (2 + 12));
}
