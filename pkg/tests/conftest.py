# filled by the acceptance suite: criterion -> {part: (ok, detail)}
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p[0] for p in parts.values())
        bits = []
        for name, (part_ok, detail) in sorted(parts.items()):
            tag = "" if part_ok else "FAIL "
            bits.append(f"[{name}] {tag}{detail}" if name else f"{tag}{detail}")
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit}: " + "; ".join(bits))
