import numpy as np
import pytest

from qcausal.events import (
    ChoiMap,
    Instrument,
    choi_from_kraus,
    choi_from_unitary,
    identity_channel,
    identity_event,
    measure_prepare_instrument,
    noisy_event,
)
from qcausal.mqcm import (
    CausalDag,
    assemble,
    compose_chain,
    markov_chain,
    random_channel,
    make_rng,
    wires_process,
)
from qcausal.process import (
    LocalLab,
    ProcessMatrix,
    born_probability,
    check_process,
    direct_cause,
    influence_free,
    is_valid_process,
    marginal_distribution,
    outcome_distribution,
    reduced_process,
    signalling_witness,
    spanning_events,
)
from qcausal.tensor import CMatrix, double_ket, permute_subsystems

from oracles import (
    X,
    born_full,
    rand_density,
    rand_kraus,
    rand_unitary,
    rng,
    table_full,
    unitary_event,
)

QUBIT = LocalLab("A", 2, 2)


def wire(d=2):
    v = double_ket(np.eye(d))
    return np.outer(v, v.conj())


def direct_cause_w(rho, u):
    """rho on A_I, channel U from A_O to B_I, identity on B_O."""
    v = double_ket(u)
    return ProcessMatrix([LocalLab("A", 2, 2), LocalLab("B", 2, 2)],
                         np.kron(np.kron(rho, np.outer(v, v.conj())), np.eye(2)))


def common_cause_w(rho):
    # canonical order A_I A_O B_I B_O; rho lives on A_I B_I
    t = np.einsum("abcd,ef,gh->aebgcfdh", rho.reshape(2, 2, 2, 2), np.eye(2), np.eye(2))
    return ProcessMatrix([LocalLab("A", 2, 2), LocalLab("B", 2, 2)], t.reshape(16, 16))


def pauli_z_instrument(lab, reprep=True):
    e = [np.diag([1, 0]), np.diag([0, 1])]
    if reprep:
        return Instrument([ChoiMap(CMatrix(np.kron(p, p), (2, 2))) for p in e], lab)
    return measure_prepare_instrument(e, np.eye(2) / 2, lab)


def test_born_single_lab_reduces_to_ordinary_rule():
    g = rng(20)
    rho = rand_density(2, g)
    w = ProcessMatrix([LocalLab("A", 2, 1)], rho)
    e = rand_density(2, g)
    p = born_probability(w, [ChoiMap(CMatrix(e, (2, 1)))])
    assert abs(p - np.trace(e @ rho).real) <= 1e-10
    w0 = ProcessMatrix([LocalLab("A", 2, 1)], np.diag([1, 0]))
    assert abs(born_probability(w0, [ChoiMap(CMatrix(np.diag([1, 0]), (2, 1)))]) - 1) <= 1e-12


def test_born_prepared_state_through_wire():
    g = rng(21)
    rho = rand_density(2, g)
    e = rand_density(2, g) * 0.7
    # labs A (measures) and B (prepares), the wire runs from B_O to A_I
    w = ProcessMatrix([LocalLab("A", 2, 1), LocalLab("B", 1, 2)], wire())
    p = born_probability(w, {"A": ChoiMap(CMatrix(e, (2, 1))), "B": ChoiMap(CMatrix(rho.T, (1, 2)))})
    assert abs(p - np.trace(e @ rho).real) <= 1e-10


def test_identity_events_on_wires():
    w = wires_process(CausalDag.from_pairs("AB", [("A", "B")]), {"B": 2})
    lab_a = w.lab("A")
    p = born_probability(w, [ChoiMap(CMatrix(np.eye(2), (1, 2)) / 2), identity_event(2)])
    assert abs(p - 1) <= 1e-12
    assert lab_a.d_in == 1


def test_born_matches_full_kronecker_oracle():
    g = rng(22)
    w = direct_cause_w(rand_density(2, g), rand_unitary(2, g))
    evs = [choi_from_kraus(rand_kraus(2, 2, 2, g)[:1], 2, 2) for _ in range(2)]
    p = born_probability(w, evs)
    assert abs(p - born_full(w.matrix.data, [e.matrix.data for e in evs]).real) <= 1e-12


def test_common_cause_statistics():
    g = rng(23)
    rho = rand_density(4, g)
    w = common_cause_w(rho)
    assert is_valid_process(w)
    ea = [np.diag([1, 0]), np.diag([0, 1])]
    v = np.array([1, 1j]) / np.sqrt(2)
    eb = [np.outer(v, v.conj()), np.eye(2) - np.outer(v, v.conj())]
    ja = measure_prepare_instrument(ea, rand_density(2, g), "A")
    jb = measure_prepare_instrument(eb, rand_density(2, g), "B")
    t = outcome_distribution(w, {"A": ja, "B": jb})
    for x in range(2):
        for y in range(2):
            assert abs(t.probs[x, y] - np.trace(np.kron(ea[x], eb[y]) @ rho).real) <= 1e-10
    assert np.abs(t.probs - table_full(w.matrix.data, [ja.stack(), jb.stack()])).max() <= 1e-12


def test_bell_state_correlations():
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    w = common_cause_w(np.outer(phi, phi))
    t = outcome_distribution(w, [pauli_z_instrument("A"), pauli_z_instrument("B")])
    assert np.allclose(t.probs, [[0.5, 0], [0, 0.5]], atol=1e-12)


def test_single_outcome_instruments_give_certainty():
    w = direct_cause_w(rand_density(2, rng(24)), X)
    t = outcome_distribution(w, [Instrument([identity_event(2)]), Instrument([noisy_event(2, 2)])])
    assert t.as_dict() == {(0, 0): pytest.approx(1.0, abs=1e-12)}


def test_invalid_instrument_rejected():
    w = direct_cause_w(np.eye(2) / 2, X)
    half = Instrument([ChoiMap(identity_event(2).matrix * 0.5)])
    with pytest.raises(ValueError):
        outcome_distribution(w, [half, half])


def test_marginals():
    w = common_cause_w(np.eye(4) / 4)
    g = rng(25)
    jb = Instrument([choi_from_kraus([k], 2, 2) for k in rand_kraus(2, 2, 3, g)], "B")
    m = marginal_distribution(w, [pauli_z_instrument("A", False), jb], "A")
    assert np.allclose(m.probs, [0.5, 0.5])
    with pytest.raises(KeyError):
        marginal_distribution(w, [pauli_z_instrument("A"), jb], "Q")

    w = direct_cause_w(np.eye(2) / 2, np.eye(2))
    meas_b = pauli_z_instrument("B", False)
    for k in range(2):
        prep = Instrument([ChoiMap(CMatrix(np.kron(np.eye(2), np.diag(np.eye(2)[k])), (2, 2)))])
        m = marginal_distribution(w, [prep, meas_b], "B")
        assert np.allclose(m.probs, np.eye(2)[k], atol=1e-12)

    t = outcome_distribution(w, [pauli_z_instrument("A"), meas_b])
    assert np.allclose(t.marginal("A").probs, t.probs.sum(axis=1))


def test_influence_free_and_direct_cause():
    g = rng(26)
    rho_ab = rand_density(4, g)
    cc = common_cause_w(rho_ab)
    assert influence_free(cc, "A") and influence_free(cc, "B")
    assert not direct_cause(cc, "A", "B") and not direct_cause(cc, "B", "A")

    dc = direct_cause_w(rand_density(2, g), rand_unitary(2, g))
    assert not influence_free(dc, "A")
    assert influence_free(dc, "B")
    assert direct_cause(dc, "A", "B") and not direct_cause(dc, "B", "A")

    w = wires_process(CausalDag.from_pairs("AB", [("A", "B")]))
    assert not influence_free(w, "A")


def test_direct_versus_indirect_cause():
    rho = rand_density(2, rng(27))
    labs = [LocalLab("A", 2, 2), LocalLab("B", 2, 2), LocalLab("C", 2, 2)]
    w = ProcessMatrix(labs, np.kron(np.kron(np.kron(rho, wire()), wire()), np.eye(2)))
    assert is_valid_process(w)
    assert not direct_cause(w, "A", "C")
    assert direct_cause(w, "A", "B") and direct_cause(w, "B", "C")
    red = reduced_process(w, {"B": noisy_event(2, 2)})
    assert influence_free(red, "A")
    red = reduced_process(w, {"B": identity_event(2)})
    assert direct_cause(red, "A", "C")


def test_signalling_witness():
    dc = direct_cause_w(np.eye(2) / 2, np.eye(2))
    wit = signalling_witness(dc, "A", "B")
    assert wit is not None and abs(wit.gap - 1) <= 1e-9
    # the witness really is one: recompute B's marginal with the library
    p0 = marginal_distribution(dc, {"A": wit.instrument, "B": wit.measurement}, "B").probs
    p1 = marginal_distribution(dc, {"A": wit.alternative, "B": wit.measurement}, "B").probs
    assert abs(np.abs(p0 - p1).max() - wit.gap) <= 1e-12
    assert signalling_witness(dc, "B", "A") is None

    cc = common_cause_w(rand_density(4, rng(28)))
    assert signalling_witness(cc, "A", "B") is None
    assert signalling_witness(cc, "B", "A") is None

    w = wires_process(CausalDag.from_pairs("AB", [("A", "B")]), {"B": 2})
    wit = signalling_witness(w, "A", "B")
    assert wit is not None and abs(wit.gap - 1) <= 1e-9
    with pytest.raises(ValueError):
        signalling_witness(w, "A", "A")


def test_signalling_witness_through_intermediate_lab():
    m = markov_chain(np.diag([1, 0]), [identity_channel(2), identity_channel(2)])
    w = assemble(m)
    wit = signalling_witness(w, "L1", "L3")
    assert wit is not None and wit.gap > 0.5
    assert signalling_witness(w, "L3", "L1") is None


def test_reduced_process_middle_identity_composes_channels():
    gen = make_rng(29)
    chans = [random_channel((2,), 2, gen) for _ in range(2)]
    rho = rand_density(2, rng(29))
    w = assemble(markov_chain(rho, chans))
    red = reduced_process(w, {"L2": identity_event(2)})
    direct = assemble(markov_chain(rho, [compose_chain(chans, 3)]))
    assert red.ids == ("L1", "L3")
    assert np.abs(red.matrix.data - direct.matrix.data).max() <= 1e-12
    assert is_valid_process(red)


def test_reduced_process_fix_everything():
    w = direct_cause_w(rand_density(2, rng(30)), X)
    red = reduced_process(w, {"A": identity_event(2), "B": noisy_event(2, 2)})
    assert red.matrix.data.shape == (1, 1) and abs(red.matrix.data[0, 0] - 1) <= 1e-12
    with pytest.raises(ValueError):
        reduced_process(w, {"A": ChoiMap(CMatrix(np.kron(np.diag([1, 0]), np.eye(2)), (2, 2)))})


def test_born_is_linear_in_each_event():
    g = rng(31)
    w = direct_cause_w(rand_density(2, g), rand_unitary(2, g))
    a1 = choi_from_kraus(rand_kraus(2, 2, 1, g), 2, 2)
    a2 = choi_from_kraus(rand_kraus(2, 2, 2, g), 2, 2)
    b = choi_from_kraus(rand_kraus(2, 2, 2, g), 2, 2)
    t = 0.3
    mix = ChoiMap(a1.matrix * t + a2.matrix * (1 - t))
    lhs = born_probability(w, [mix, b])
    rhs = t * born_probability(w, [a1, b]) + (1 - t) * born_probability(w, [a2, b])
    assert abs(lhs - rhs) <= 1e-12


def test_influence_free_lab_cannot_signal_to_random_instruments():
    g = rng(32)
    w = direct_cause_w(rand_density(2, g), rand_unitary(2, g))
    assert influence_free(w, "B")
    meas_a = Instrument([choi_from_kraus([k], 2, 2) for k in rand_kraus(2, 2, 3, g)], "A")
    base = None
    for _ in range(20):
        jb = Instrument([choi_from_kraus([k], 2, 2) for k in rand_kraus(2, 2, 2, g)], "B")
        m = marginal_distribution(w, [meas_a, jb], "A").probs
        base = m if base is None else base
        assert np.abs(m - base).max() < 1e-9


def test_validity_checks():
    w = direct_cause_w(rand_density(2, rng(33)), X)
    assert check_process(w).ok
    bad = ProcessMatrix(w.labs, w.matrix.data * 2)
    assert not check_process(bad).checks["trace"]
    # two-way loop: A_O -> B_I and B_O -> A_I wires; positive, right trace, not normalised
    pair = np.kron(wire(), wire())  # order A_O B_I B_O A_I
    t = permute_subsystems(CMatrix(pair, (2, 2, 2, 2)), [1, 2, 3, 0]).data
    cyc = ProcessMatrix(w.labs, t)
    r = check_process(cyc)
    assert r.checks["psd"] and r.checks["trace"]
    assert not r.checks["normalization"]


def test_spanning_events_are_cptp():
    for d_in, d_out in [(1, 2), (2, 1), (2, 2), (3, 2)]:
        evs = spanning_events(d_in, d_out)
        assert len(evs) == d_in ** 2 * (d_out ** 2 - 1) + 1
        for e in evs:
            m = ChoiMap(CMatrix(e, (d_in, d_out)))
            assert m.is_trace_preserving()
        flat = np.array([e.reshape(-1) for e in evs])
        assert np.linalg.matrix_rank(flat) == len(evs)


def test_negative_probability_is_an_error():
    w = ProcessMatrix([LocalLab("A", 2, 1)], np.diag([1.0, 0.0]))
    assert born_probability(w, [ChoiMap(CMatrix(np.diag([0, 1]), (2, 1)))]) == 0.0
    bad = ProcessMatrix([LocalLab("A", 2, 1)], np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        born_probability(bad, [ChoiMap(CMatrix(np.diag([0, 1]), (2, 1)))])


def test_unitary_event_oracle_agrees():
    u = rand_unitary(2, rng(34))
    assert np.allclose(choi_from_unitary(u).matrix.data, unitary_event(u))
