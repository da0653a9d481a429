"""Acceptance criteria, one test each; every test prints a PASS or FAIL line.

Run directly with ``python tests/test_acceptance.py`` or through pytest.
"""
import itertools
import time

import numpy as np
import pytest

from qcausal.beyond import control_preparation, quantum_switch, readout_effect, switch_probabilities
from qcausal.classical import (
    ClassicalCausalModel,
    classical_statistics,
    dephase_process,
    embed_classical_model,
    intervention_tables,
    pointer_families,
    random_families,
    verify_markov_factorization,
)
from qcausal.discovery import (
    NotFaithfulError,
    discover_dag,
    has_compatible_dag,
    is_compatible,
    is_faithful,
    sample_random_mqcm,
    screening_check,
)
from qcausal.events import (
    ChoiMap,
    Instrument,
    choi_from_kraus,
    choi_from_unitary,
    identity_event,
    state_channel,
    unitary_channel,
)
from qcausal.mqcm import CausalDag, Mqcm, all_dags, assemble, compose_chain, make_rng, markov_chain, random_channel, random_mqcm
from qcausal.process import LocalLab, ProcessMatrix, born_probability, check_process, outcome_distribution
from qcausal.tensor import CMatrix
from qcausal.tomography import build_design, reconstruct, simulate_statistics

from oracles import X, Z, born_full, kraus_apply, rand_density, rand_kraus, rand_unitary, rng

RESULTS = []


def verdict(n, title, ok, detail=""):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title}" + (f" [{detail}]" if detail else "")
    RESULTS.append(line)
    print(line)
    return ok


def mech_apply(t, rho, ds, dt):
    blocks = t.reshape(ds, dt, ds, dt)
    return sum(rho[j, l] * blocks[j, :, l, :] for j in range(ds) for l in range(ds))


def test_c01_born_closed_forms():
    t0 = time.perf_counter()
    errs = []
    for seed in range(20):
        g = rng(1000 + seed)
        rho, e, f = rand_density(2, g), rand_density(2, g), rand_density(2, g)
        e, f = e / np.linalg.eigvalsh(e).max(), f / np.linalg.eigvalsh(f).max()
        # single lab
        w = ProcessMatrix([LocalLab("A", 2, 1)], rho)
        errs.append(abs(born_probability(w, [ChoiMap(CMatrix(e, (2, 1)))]) - np.trace(e @ rho).real))
        # prepared state sent to a measuring lab
        v = np.eye(2).reshape(-1)
        w = ProcessMatrix([LocalLab("A", 2, 1), LocalLab("B", 1, 2)], np.outer(v, v))
        p = born_probability(w, [ChoiMap(CMatrix(e, (2, 1))), ChoiMap(CMatrix(rho.T, (1, 2)))])
        errs.append(abs(p - np.trace(e @ rho).real))
        # common cause
        rho_ab = rand_density(4, g)
        w = ProcessMatrix([LocalLab("A", 2, 1), LocalLab("B", 2, 1)], rho_ab)
        p = born_probability(w, [ChoiMap(CMatrix(e, (2, 1))), ChoiMap(CMatrix(f, (2, 1)))])
        errs.append(abs(p - np.trace(np.kron(e, f) @ rho_ab).real))
        # direct cause: CP map M at A, unitary U to B, B measures F
        u = rand_unitary(2, g)
        ks = rand_kraus(2, 2, 3, g)[:2]
        w = assemble(Mqcm(CausalDag.from_pairs("AB", [("A", "B")]),
                          {"A": state_channel(rho), "B": unitary_channel(u)}))
        p = born_probability(w, [choi_from_kraus(ks, 2, 2), ChoiMap(CMatrix(f, (2, 1)))])
        errs.append(abs(p - np.trace(f @ u @ kraus_apply(ks, rho) @ u.conj().T).real))
    dt = time.perf_counter() - t0
    err = max(errs)
    ok = err <= 1e-10 and dt < 1.0
    verdict(1, "Born rule closed forms", ok, f"max error {err:.1e}, {dt:.2f} s")
    assert ok


def test_c02_markov_chain_reduction():
    errs = []
    for seed in range(20):
        gen = make_rng(2000 + seed)
        g = rng(2000 + seed)
        rho1 = rand_density(2, g)
        chans = [random_channel((2,), 2, gen) for _ in range(3)]
        w = assemble(markov_chain(rho1, chans))
        state = rho1
        for k in range(1, 5):
            if k > 1:
                state = mech_apply(chans[k - 2].matrix.data, state, 2, 2)
                tk = compose_chain(chans, k)
                errs.append(np.abs(mech_apply(tk.matrix.data, rho1, 2, 2) - state).max())
            e = rand_density(2, g)
            e = e / np.linalg.eigvalsh(e).max()
            sigma = rand_density(2, g)
            ev = [identity_event(2)] * 4
            ev[k - 1] = ChoiMap(CMatrix(np.kron(e, sigma.T), (2, 2)))
            errs.append(abs(born_probability(w, ev) - np.trace(e @ state).real))
    err = max(errs)
    ok = err <= 1e-10
    verdict(2, "Markov chain reduction", ok, f"max error {err:.1e}")
    assert ok


@pytest.fixture(scope="module")
def corpus():
    t0 = time.perf_counter()
    stats = {"runs": 0, "recovered": 0, "recovered_unfaithful": 0, "screen_fail": 0, "screen_checks": 0}
    for g in all_dags("ABC"):
        for seed in range(100):
            w = assemble(sample_random_mqcm(g, seed))
            stats["runs"] += 1
            try:
                found = discover_dag(w)
            except NotFaithfulError:
                found = None
            if found is not None and found.pairs() == g.pairs():
                stats["recovered"] += 1
            if found is not None and not is_faithful(w, found):
                stats["recovered_unfaithful"] += 1
            stats["discover_seconds"] = time.perf_counter() - t0
            for v in g.vertices:
                stats["screen_checks"] += 1
                if not screening_check(w, v, g):
                    stats["screen_fail"] += 1
    stats["seconds"] = time.perf_counter() - t0
    return stats


def test_c03_discovery_round_trip(corpus):
    rate = corpus["recovered"] / corpus["runs"]
    ok = (corpus["runs"] == 2500 and rate >= 0.99 and corpus["recovered_unfaithful"] == 0
          and corpus["seconds"] < 300)
    verdict(3, "discovery round trip", ok,
            f"{corpus['recovered']}/{corpus['runs']} recovered, "
            f"{corpus['recovered_unfaithful']} unfaithful, {corpus['seconds']:.1f} s with screening")
    assert ok


def test_c04_faithfulness_counterexample():
    g = rng(4000)
    ra, rb = rand_density(2, g), rand_density(2, g)
    assert np.abs(ra - np.eye(2) / 2).max() > 1e-3 and np.abs(rb - np.eye(2) / 2).max() > 1e-3
    w = ProcessMatrix([LocalLab("A", 2, 2), LocalLab("B", 2, 2)],
                      np.kron(np.kron(ra, np.eye(2)), np.kron(rb, np.eye(2))))
    dags = {"empty": CausalDag.from_pairs("AB", []),
            "A->B": CausalDag.from_pairs("AB", [("A", "B")]),
            "B->A": CausalDag.from_pairs("AB", [("B", "A")])}
    comp = {k: is_compatible(w, d) for k, d in dags.items()}
    faith = {k: is_faithful(w, d) for k, d in dags.items()}
    ok = all(comp.values()) and faith == {"empty": True, "A->B": False, "B->A": False}
    verdict(4, "faithfulness counterexample", ok, f"compatible {comp}, faithful {faith}")
    assert ok


def test_c05_screening_off(corpus):
    ok = corpus["screen_fail"] == 0 and corpus["screen_checks"] == 7500
    verdict(5, "screening off", ok, f"{corpus['screen_fail']} failures in {corpus['screen_checks']} checks")
    assert ok


def test_c06_tomography():
    dags = [CausalDag.from_pairs("AB", p) for p in ([], [("A", "B")], [("B", "A")])]
    errs = []
    for k in range(50):
        w = assemble(random_mqcm(dags[k % 3], 6000 + k))
        design = build_design(w.labs)
        est = reconstruct(simulate_statistics(w, design), design)
        errs.append(np.abs(est.matrix.data - w.matrix.data).max())
    exact = max(errs)
    w = assemble(random_mqcm(dags[1], 6100))
    design = build_design(w.labs)
    means = []
    for shots in (10 ** 4, 10 ** 5, 10 ** 6):
        e = [np.abs(reconstruct(simulate_statistics(w, design, shots, s), design).matrix.data
                    - w.matrix.data).max() for s in range(20)]
        means.append(float(np.mean(e)))
    ok = exact <= 1e-8 and means[0] > means[1] > means[2]
    verdict(6, "tomography", ok, f"exact max error {exact:.1e}, mean finite-shot errors "
            + ", ".join(f"{m:.3g}" for m in means))
    assert ok


def test_c07_classical_limit():
    dags = [g for n in (1, 2, 3) for g in all_dags("ABC"[:n])]
    worst_d = 0.0
    failures = models = 0
    for gi, g in enumerate(dags):
        for seed in range(100):
            gen = make_rng(7000 + 100 * gi + seed)
            dims = {v: int(gen.integers(2, 4)) for v in g.vertices}
            pick = make_rng(70000 + 100 * gi + seed)
            m = random_mqcm(g, int(pick.integers(2 ** 31)), in_dims=dims)
            w = assemble(m)
            fams = random_families(w, gen)
            tabs = intervention_tables(w, fams)
            ok, _ = verify_markov_factorization(tabs, g, tol=1e-9)
            failures += not ok
            dtabs = intervention_tables(dephase_process(w), fams)
            worst_d = max(worst_d, max(np.abs(dtabs[k].probs - t.probs).max() for k, t in tabs.items()))
            models += 1
    ok = failures == 0 and worst_d <= 1e-10
    verdict(7, "classical limit", ok, f"{models} models over {len(dags)} DAGs, {failures} factorisation "
            f"failures, dephasing difference {worst_d:.1e}")
    assert ok


def test_c08_classical_embedding():
    dag = CausalDag.from_pairs("XYZ", [("X", "Z"), ("Y", "Z")])
    xor = np.zeros((2, 2, 2))
    for a, b in itertools.product(range(2), repeat=2):
        xor[a, b, a ^ b] = 1
    model = ClassicalCausalModel({"X": 2, "Y": 2, "Z": 2}, dag,
                                 {"X": [0.3, 0.7], "Y": [0.6, 0.4], "Z": xor})
    m = embed_classical_model(model)
    fams = pointer_families(m)

    # oracle: the XOR joint written out by hand
    ref = np.zeros((2, 2, 2))
    for a, b in itertools.product(range(2), repeat=2):
        ref[a, b, a ^ b] = [0.3, 0.7][a] * [0.6, 0.4][b]
    errs = [np.abs(classical_statistics(m, fams).probs - ref).max()]
    for v in "XYZ":
        for x in range(2):
            inter = {v: f"do({x})"}
            errs.append(np.abs(classical_statistics(m, fams, inter).probs - model.joint(inter)).max())
    # do(x) on a parent: Z follows the forced value
    p = classical_statistics(m, fams, {"X": "do(1)"}).probs
    errs.append(abs(p[1, 0, 1] - 0.6))
    err = max(errs)
    ok = err <= 1e-10
    verdict(8, "classical embedding", ok, f"max error {err:.1e}")
    assert ok


def test_c09_quantum_switch():
    plus, minus = np.array([1, 1]) / np.sqrt(2), np.array([1, -1]) / np.sqrt(2)
    psi = np.array([1, 0])
    w = quantum_switch(psi)

    def oracle(ua, ub, vec):
        mats = [choi_from_unitary(ua).matrix.data, choi_from_unitary(ub).matrix.data,
                control_preparation(plus).matrix.data,
                readout_effect(np.kron(np.outer(vec, vec), np.eye(2))).matrix.data]
        return born_full(w.matrix.data, mats).real

    anti = switch_probabilities(X, Z, psi)
    comm = switch_probabilities(Z, np.diag([1, 1j]), psi)
    errs = [abs(anti["-"] - 1), abs(comm["-"]),
            abs(anti["-"] - oracle(X, Z, minus)), abs(comm["-"] - oracle(Z, np.diag([1, 1j]), minus)),
            abs(anti["+"] - oracle(X, Z, plus))]
    valid = check_process(w).ok
    no_dag = not has_compatible_dag(w)
    err = max(errs)
    ok = err <= 1e-10 and valid and no_dag
    verdict(9, "quantum switch", ok, f"max error {err:.1e}, valid {valid}, no compatible DAG {no_dag}")
    assert ok


def test_c10_conservation():
    worst_sum = 0.0
    bad = []
    ws = []
    for g in all_dags("ABC"):
        for seed in range(4):
            ws.append(assemble(random_mqcm(g, 10000 + seed, in_dims={"A": 2, "B": 3, "C": 2})))
    ws.append(assemble(markov_chain(np.eye(2) / 2, [random_channel((2,), 2, make_rng(1))] * 3)))
    ws.append(quantum_switch(np.array([1, 0])))
    gen = rng(10)
    for k, w in enumerate(ws):
        r = check_process(w)
        if not (r.checks["psd"] and r.checks["trace"] and r.checks["normalization"]):
            bad.append(k)
        insts = []
        for lab in w.labs:
            ks = rand_kraus(lab.d_in, lab.d_out, lab.d_in + 1, gen)
            insts.append(Instrument([choi_from_kraus([q], lab.d_in, lab.d_out) for q in ks], lab.id))
        worst_sum = max(worst_sum, abs(outcome_distribution(w, insts).total() - 1))
        if len(w.labs) == 3 and k % 5 == 0:
            for t in intervention_tables(w, random_families(w, make_rng(k))).values():
                worst_sum = max(worst_sum, abs(t.total() - 1))
    w = ws[3]
    design = build_design(w.labs)
    for shots in (None, 1000):
        worst_sum = max(worst_sum, abs(simulate_statistics(w, design, shots, 1).total() - 1))
    ok = worst_sum <= 1e-9 and not bad
    verdict(10, "conservation and normalisation", ok,
            f"{len(ws)} processes, {len(bad)} invalid, worst table sum deviation {worst_sum:.1e}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
