import peridot.cli
import peridot.experiments
import peridot.sim

_real_run = peridot.sim.run_scenario
SIMULATIONS = {"runs": 0, "transmissions": 0, "violations": 0}


def _checked_run(config):
    res = _real_run(config)
    bad = peridot.sim.nonce_violations(res.truth, config.alphabet)
    SIMULATIONS["violations"] += len(bad)
    assert not bad, f"CN reused before q transmissions: {bad[:5]}"
    SIMULATIONS["runs"] += 1
    SIMULATIONS["transmissions"] += len(res.truth)
    return res


# Patched at import, before any test module binds the name, so every
# simulation run anywhere in the suite has its truth log checked.
for _mod in (peridot.sim, peridot.experiments, peridot.cli):
    _mod.run_scenario = _checked_run


# criterion number -> (title, ok, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] #{n} {title}: {detail}")
    tr.write_line(
        f"       simulations checked for CN reuse this session: {SIMULATIONS['runs']} runs, "
        f"{SIMULATIONS['transmissions']} transmissions, {SIMULATIONS['violations']} violations"
    )
