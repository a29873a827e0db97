def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or rep.when != "call" and outcome != "error":
                continue
            rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL", props))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, props in sorted(rows, key=lambda r: r[0]):
        line = f"criterion {number} {verdict}  {props.get('title', '')}"
        if "elapsed_s" in props:
            line += f"  [{props['elapsed_s']:.1f} s]"
        if "detail" in props:
            line += f"  {props['detail']}"
        terminalreporter.write_line(line)
