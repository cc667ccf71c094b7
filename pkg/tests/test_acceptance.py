"""Acceptance criteria, one test per criterion.

Each criterion prints a PASS line with its measured quantities; conftest
re-emits the collected lines after the run so they are visible in ordinary
``pytest -v`` output (reaching the print means every assertion held)."""

import math
import statistics
import time

from pplalign.cfa import (
    STOCH, Direct, Flow, ImplFlow, analyze, generate_constraints, label_var,
    mark_dynamic, name_var, set_variables, solve_constraints,
)
from pplalign.inference import (
    run_aligned_smc, run_unaligned_smc, systematic_resample,
)
from pplalign.label import (
    LambdaInfo, assign_labels, collect_lambdas, postorder_label_map,
)
from pplalign.runtime import Evaluator, RngStream
from pplalign.syntax import parse_and_desugar
from pplalign.terms import K_WEIGHT, iter_subterms
from pplalign.transform import align_weights, cps_transform
from pplalign.phylo import (
    CrbdParams, crbd_exact_log_likelihood, parse_newick, resolve_polytomies,
)

from helpers import (
    MODEL_NAMES, example_branch_flow, example_reverse_flow, kalman_ssm,
    kleene_solve, model_source, tree_source,
)

_shared = {}
REPORT_LINES = []


def _report(criterion, detail):
    line = f"ACCEPTANCE {criterion}: PASS ({detail})"
    REPORT_LINES.append(line)
    print("\n" + line)


def _pipeline(src, mode):
    res = analyze(parse_and_desugar(src))
    dyn = res.dynamic if mode == "aligned" else frozenset()
    return res, cps_transform(align_weights(res.labeled, dyn))


def _weight_lines(res):
    dyn, aligned = set(), set()
    for node in iter_subterms(res.labeled):
        if node.kind == K_WEIGHT:
            (dyn if node.label in res.dynamic else aligned).add(node.span[0])
    return dyn, aligned


def test_criterion_1_golden_analysis_of_the_worked_example():
    start = time.perf_counter()
    t = example_branch_flow()
    labeled = assign_labels(t, label_map=postorder_label_map(t))
    lams = collect_lambdas(labeled)
    constraints = generate_constraints(labeled, lams)
    lam_x = LambdaInfo("x", 7, 8)
    lam_y = LambdaInfo("y", 9, 10)
    want = {
        Direct(STOCH, label_var(2)),
        Direct(lam_y, label_var(10)),
        Direct(lam_x, label_var(8)),
        Flow(name_var("y"), label_var(9)),
        Flow(label_var(5), label_var(7)),
        Flow(label_var(6), label_var(7)),
        Flow(name_var("x"), label_var(3)),
        ImplFlow(lam_x, label_var(8), label_var(10), name_var("x")),
        ImplFlow(lam_x, label_var(8), label_var(7), label_var(11)),
        ImplFlow(lam_y, label_var(8), label_var(10), name_var("y")),
        ImplFlow(lam_y, label_var(8), label_var(9), label_var(11)),
        ImplFlow(lam_x, label_var(3), label_var(4), name_var("x")),
        ImplFlow(lam_x, label_var(3), label_var(7), label_var(5)),
        ImplFlow(lam_y, label_var(3), label_var(4), name_var("y")),
        ImplFlow(lam_y, label_var(3), label_var(9), label_var(5)),
    }
    # the constraint-generation rules give 15 constraints for this program,
    # matching the worked set item for item
    assert constraints == want
    solution = solve_constraints(constraints, set_variables(labeled))
    assert solution.of_name("x") == {lam_y}
    assert solution.of_name("y") == frozenset()
    assert solution.of_label(2) == {STOCH}
    assert solution.of_label(3) == {lam_y}
    assert solution.of_label(8) == {lam_x}
    assert solution.of_label(10) == {lam_y}
    for l in (1, 4, 5, 6, 7, 9, 11):
        assert solution.of_label(l) == frozenset()
    dynamic = mark_dynamic(labeled, solution)
    assert dynamic == {3, 4, 5, 6, 9, 10}
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _report(1, f"constraints, minimal solution and dynamic set exact; "
               f"{elapsed*1e3:.0f} ms")


def test_criterion_2_golden_analysis_of_remaining_programs():
    start = time.perf_counter()
    t = example_reverse_flow()
    res = analyze(t, label_map=postorder_label_map(t))
    assert res.dynamic == {5, 6, 11, 12, 13, 14}

    fig1 = analyze(parse_and_desugar(model_source("fig1_toy.ppl")))
    assert _weight_lines(fig1) == ({3, 4, 7}, {1})

    fig7 = analyze(parse_and_desugar(model_source("fig7_sim.ppl")))
    assert _weight_lines(fig7) == ({4}, {12})
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _report(2, f"reverse-flow underlines and weight classifications exact; "
               f"{elapsed*1e3:.0f} ms")


def test_criterion_3_toy_degeneracy_reproduction():
    start = time.perf_counter()
    src = model_source("fig1_toy.ppl")
    _, aligned = _pipeline(src, "aligned")
    _, unaligned = _pipeline(src, "unaligned")
    n = 10000
    degenerate = 0
    balanced = 0
    for seed in range(100):
        ru = run_unaligned_smc(unaligned, n, seed)
        if sum(1 for s in ru.samples if s is False) / n < 0.01:
            degenerate += 1
        ra = run_aligned_smc(aligned, n, seed)
        if 0.45 <= sum(1 for s in ra.samples if s is False) / n <= 0.55:
            balanced += 1
    elapsed = time.perf_counter() - start
    assert degenerate >= 95, degenerate
    assert balanced >= 95, balanced
    assert elapsed < 60.0
    _report(3, f"unaligned degenerate in {degenerate}/100 seeds, aligned "
               f"balanced in {balanced}/100; {elapsed:.1f} s")


def test_criterion_4_ssm_quantitative_check():
    start = time.perf_counter()
    mean_exact, var_exact, logz_exact = kalman_ssm()
    # the known posterior for this model, cross-checked by the filter
    assert abs(mean_exact - 14.4649) < 5e-5
    assert abs(var_exact - 1.6216) < 5e-5
    assert abs(mean_exact - 14.464864864864865) < 1e-12
    assert abs(var_exact - 1.6216216216216215) < 1e-12

    _, prog = _pipeline(model_source("ssm_lgss.ppl"), "aligned")
    n = 10000
    r = run_aligned_smc(prog, n, seed=0)
    mean = statistics.fmean(r.samples)
    var = statistics.pvariance(r.samples)
    assert abs(mean - mean_exact) < 0.1
    assert abs(var - var_exact) < 0.3

    estimates = [run_aligned_smc(prog, n, seed).log_normalizer
                 for seed in range(100)]
    mean_logz = statistics.fmean(estimates)
    assert abs(mean_logz - logz_exact) < 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    _report(4, f"mean {mean:.4f} (exact {mean_exact:.4f}), var {var:.4f} "
               f"(exact {var_exact:.4f}), mean logZ {mean_logz:.4f} "
               f"(exact {logz_exact:.4f}); {elapsed:.1f} s")


def test_criterion_5_crbd_methodology():
    start = time.perf_counter()
    tree = resolve_polytomies(parse_newick(tree_source()), 0.2)
    params = CrbdParams(0.2, 0.1)
    exact = crbd_exact_log_likelihood(tree, params)
    src = model_source("crbd_pitheciidae_28.ppl")
    _, aligned = _pipeline(src, "aligned")
    _, unaligned = _pipeline(src, "unaligned")

    big = [run_aligned_smc(aligned, 10000, seed).log_normalizer
           for seed in range(100)]
    mean_big = statistics.fmean(big)
    assert abs(mean_big - exact) < 0.2

    t_aligned = time.perf_counter()
    small_aligned = [run_aligned_smc(aligned, 1000, seed).log_normalizer
                     for seed in range(100)]
    t_aligned = time.perf_counter() - t_aligned
    t_unaligned = time.perf_counter()
    small_unaligned = [run_unaligned_smc(unaligned, 1000, seed).log_normalizer
                       for seed in range(100)]
    t_unaligned = time.perf_counter() - t_unaligned
    var_aligned = statistics.variance(small_aligned)
    var_unaligned = statistics.variance(small_unaligned)
    assert var_aligned < var_unaligned
    _shared["crbd_times"] = (t_aligned, t_unaligned)

    # consistency across particle counts: the estimates tighten around the
    # analytic value as n grows
    tiny = [run_aligned_smc(aligned, 100, seed).log_normalizer
            for seed in range(100)]
    assert statistics.variance(tiny) > var_aligned > statistics.variance(big)
    assert abs(statistics.fmean(tiny) - exact) >= abs(mean_big - exact)

    elapsed = time.perf_counter() - start
    assert elapsed < 1800.0
    _report(5, f"mean aligned logZ {mean_big:.3f} vs exact {exact:.3f} "
               f"(n=10000, 100 reps); replicate variance at n=1000: "
               f"aligned {var_aligned:.3f} < unaligned {var_unaligned:.3f}; "
               f"spread shrinks over n=100/1000/10000; {elapsed:.0f} s")


def test_criterion_6_resample_count_invariant():
    start = time.perf_counter()
    _, prog = _pipeline(model_source("fig7_sim.ppl"), "aligned")
    for n in (1, 3, 20, 100):
        for seed in (0, 7, 1234):
            assert run_aligned_smc(prog, n, seed).resample_count == 2
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    _report(6, f"two resamplings for every n and seed; {elapsed*1e3:.0f} ms")


def test_criterion_7a_solver_matches_naive_iteration():
    for name in MODEL_NAMES:
        labeled = assign_labels(parse_and_desugar(model_source(name)))
        cs = generate_constraints(labeled)
        universe = set_variables(labeled)
        assert solve_constraints(cs, universe) == kleene_solve(cs, universe)
    _report("7a", f"worklist == Kleene iteration on {len(MODEL_NAMES)} "
                  "bundled programs")


def test_criterion_7b_solution_satisfies_constraints():
    for name in MODEL_NAMES:
        labeled = assign_labels(parse_and_desugar(model_source(name)))
        cs = generate_constraints(labeled)
        sol = solve_constraints(cs, set_variables(labeled))
        assert sol.satisfies(cs)
    _report("7b", "every generated constraint holds in the solution")


def test_criterion_7c_systematic_resampling_counts():
    rng = RngStream(4242)
    for case in range(1000):
        n = 1 + int(rng.random() * 40)
        logws = [5.0 * (rng.random() - 0.5) for _ in range(n)]
        anc = systematic_resample(logws, RngStream(case, 3, 1))
        m = max(logws)
        total = math.fsum(math.exp(w - m) for w in logws)
        for i in range(n):
            share = n * math.exp(logws[i] - m) / total
            cnt = anc.count(i)
            assert math.floor(share) <= cnt <= math.ceil(share)
    _report("7c", "ancestor counts within +-1 of n*w on 1000 random vectors")


def test_criterion_7d_cps_direct_equivalence():
    total = 0
    for name in MODEL_NAMES:
        core = parse_and_desugar(model_source(name))
        res = analyze(core)
        prog = cps_transform(align_weights(res.labeled, res.dynamic))
        ev = Evaluator()
        for seed in range(1000):
            d = ev.run(core, RngStream(seed))
            c = ev.run_to_completion(prog, RngStream(seed))
            assert d.log_weight == c.log_weight, (name, seed)
            dv, cv = d.value, c.value
            assert dv == cv or (dv != dv and cv != cv), (name, seed)
            total += 1
    _report("7d", f"{total} seeded CPS/direct agreements")


def test_criterion_7e_dynamic_soundness_instrumentation():
    checked = 0
    for name in MODEL_NAMES:
        core = parse_and_desugar(model_source(name))
        res = analyze(core)
        ev = Evaluator(track_taint=True)
        for seed in range(1000):
            ev.events.clear()
            ev.run(res.labeled, RngStream(seed))
            for event in ev.events:
                if event.in_branch:
                    assert event.origin in res.dynamic, (name, seed, event)
                checked += 1
    _report("7e", f"zero violations among {checked} weight events over "
                  f"1000 runs per model")


def test_criterion_7f_exact_normalizer_for_deterministic_weights():
    programs = [
        ("weight(2.0)\n1.0", 2.0),
        ("weight(1.5)\nweight(-3.25)\nif flip() then 1.0 else 2.0", -1.75),
        ("x = sample(normal(0.0, 1.0))\nweight(0.25)\nweight(0.5)\nx", 0.75),
    ]
    for src, want in programs:
        _, aligned = _pipeline(src, "aligned")
        _, unaligned = _pipeline(src, "unaligned")
        for runner, prog in ((run_aligned_smc, aligned),
                             (run_unaligned_smc, unaligned)):
            r = runner(prog, 128, seed=5)
            assert abs(r.log_normalizer - want) < 1e-9, src
    _report("7f", "log normalizer exact to 1e-9 on sample-independent "
                  "weights")


def test_criterion_7g_full_reproducibility(tmp_path):
    from pplalign.cli import main
    model = tmp_path / "m.ppl"
    model.write_text(model_source("ssm_lgss.ppl"))
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}.csv"
        assert main(["run", "--method", "aligned", "-n", "300", "--seed",
                     "17", "--replicates", "3", "--out", str(out),
                     str(model)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    _report("7g", "identical config gives byte-identical outputs")


def test_criterion_8_speedup_report():
    times = _shared.get("crbd_times")
    if times is None:
        src = model_source("crbd_pitheciidae_28.ppl")
        _, aligned = _pipeline(src, "aligned")
        _, unaligned = _pipeline(src, "unaligned")
        t0 = time.perf_counter()
        for seed in range(5):
            run_aligned_smc(aligned, 1000, seed)
        ta = time.perf_counter() - t0
        t0 = time.perf_counter()
        for seed in range(5):
            run_unaligned_smc(unaligned, 1000, seed)
        tu = time.perf_counter() - t0
        times = (ta, tu)
    ta, tu = times
    ratio = tu / ta if ta > 0 else float("inf")
    # reported, not gated: the reference measurement on other hardware was
    # about 1.66x; this depends on the machine and the model workload
    _report(8, f"unaligned/aligned wall-time ratio {ratio:.2f} on the "
               f"birth-death study (reference figure: 1.66; not gated)")
