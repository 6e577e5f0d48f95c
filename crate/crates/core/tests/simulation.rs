use crowdlearn::gsr::Outcome;
use crowdlearn::markets::{entropy, kl};
use crowdlearn::mechanism::LedgerStatus;
use crowdlearn::mechanism::Ledger;
use crowdlearn::sim::{replay_verify, run_simulation, verify_ledger, EventKind, Report, SimConfig, SimError};

fn config(text: &str) -> SimConfig {
    SimConfig::from_toml_str(text).unwrap()
}

const INFORMED_COMPRESSION: &str = r#"
    rounds = 3
    seed = 11
    [market]
    kind = "compression"
    n = 2
    alpha = 1.0
    data = { source = "inline", values = [0, 1, 1, 1] }
    [[agents]]
    id = "alice"
    strategy = "informed"
    belief = { kind = "truth" }
"#;

#[test]
fn single_informed_agent_earns_the_divergence() {
    let out = run_simulation(&config(INFORMED_COMPRESSION)).unwrap();
    let s = out.report.summary().unwrap();
    let expected = kl(&[0.25, 0.75], &[0.5, 0.5]);
    assert!((s.mechanism_loss - expected).abs() < 1e-12, "{}", s.mechanism_loss);
    assert!((expected - 0.130812).abs() < 1e-6);
    let alice = out.report.agents().next().unwrap();
    assert!((alice.profit - expected).abs() < 1e-12);
    assert_eq!(alice.trades, 1);
    assert_eq!(s.final_hypothesis, vec![0.25, 0.75]);
    assert!(s.final_audit_loss <= s.initial_audit_loss + 1e-9);
}

#[test]
fn zero_agents_leave_an_empty_ledger() {
    let text = INFORMED_COMPRESSION.split("[[agents]]").next().unwrap();
    let out = run_simulation(&config(text)).unwrap();
    assert_eq!(out.ledger.trades().count(), 0);
    let s = out.report.summary().unwrap();
    assert_eq!(s.mechanism_loss, 0.0);
    assert_eq!(s.total_agent_profit, 0.0);
    assert!(out.ledger.is_settled());
}

#[test]
fn noise_traders_do_not_change_total_expected_cost_at_alpha_one() {
    let text = r#"
        rounds = 10
        seed = 5
        [market]
        kind = "compression"
        n = 3
        q0 = [0.5, 0.25, 0.25]
        data = { source = "synthetic", p = [0.2, 0.3, 0.5], length = 200 }
        [[agents]]
        id = "n1"
        strategy = "noise"
        step_scale = 0.2
        [[agents]]
        id = "n2"
        strategy = "noise"
        step_scale = 0.05
    "#;
    let out = run_simulation(&config(text)).unwrap();
    let s = out.report.summary().unwrap();
    assert!(s.trades > 0);
    let LedgerStatus::Settled(settlement) = out.ledger.status() else { panic!("ledger is open") };
    let Outcome::Sample(items) = &settlement.outcome else { panic!("expected the whole stream") };
    let mut p = vec![0.0; 3];
    for item in items {
        let Outcome::Index(i) = item else { panic!("{item:?}") };
        p[*i] += 1.0 / items.len() as f64;
    }
    let expected = entropy(&p) + kl(&p, &[0.5, 0.25, 0.25]);
    assert!((s.total_expected_cost.unwrap() - expected).abs() < 1e-12);
}

#[test]
fn label_market_with_schedule_and_vouchers() {
    let text = r#"
        rounds = 4
        seed = 2
        [market]
        kind = "label"
        m = 3
        labels = [4.0, 2.0, 5.0]
        schedule = [{ after_round = 1, indices = [0] }, { after_round = 3, indices = [2] }]
        [vouchers]
        m = 1
        amount = 2.0
        [[agents]]
        id = "rater"
        strategy = "budget_optimizer"
        belief = { kind = "labels", values = [4.0, 2.5, 4.5] }
        budget = 3.0
        cash = 1.0
        [[agents]]
        id = "oracle"
        strategy = "informed"
        belief = { kind = "truth" }
        [[agents]]
        id = "noise"
        strategy = "noise"
        step_scale = 0.5
    "#;
    let out = run_simulation(&config(text)).unwrap();
    let s = out.report.summary().unwrap();
    assert_eq!(out.report.events().filter(|e| e.kind == EventKind::MiniPayout).count(), 2);
    assert_eq!(out.ledger.frozen().len(), 2);
    assert!(s.voucher_drawn <= s.voucher_bound);
    assert_eq!(s.voucher_bound, 2.0);
    assert!((s.total_agent_profit - s.mechanism_loss).abs() < 1e-9);
    assert!(verify_ledger(&out.ledger).unwrap().is_ok());
}

#[test]
fn regression_and_lmsr_runs_balance() {
    let regression = r#"
        rounds = 3
        seed = 8
        [market]
        kind = "regression"
        d = 2
        alpha = 0.5
        data = { source = "synthetic", points = 40, noise = 0.1 }
        [[agents]]
        id = "learner"
        strategy = "budget_optimizer"
        belief = { kind = "subsample", size = 10 }
        budget = 0.2
        [[agents]]
        id = "oracle"
        strategy = "informed"
        belief = { kind = "truth" }
    "#;
    let lmsr = r#"
        rounds = 3
        seed = 8
        settlement = "sample"
        scheduler = "seeded_shuffle"
        [market]
        kind = "lmsr"
        n = 3
        budget = 2.0
        data = { source = "synthetic", p = [0.2, 0.5, 0.3], length = 50 }
        [[agents]]
        id = "a"
        strategy = "informed"
        belief = { kind = "weights", p = [0.3, 0.4, 0.3] }
        [[agents]]
        id = "b"
        strategy = "budget_optimizer"
        belief = { kind = "truth" }
        budget = 0.05
    "#;
    for text in [regression, lmsr] {
        let out = run_simulation(&config(text)).unwrap();
        let s = out.report.summary().unwrap();
        assert!(s.trades > 0, "{text}");
        assert!((s.total_agent_profit - s.mechanism_loss).abs() < 1e-9);
        assert!(s.mechanism_loss <= s.worst_case_loss + 1e-9);
        assert!(verify_ledger(&out.ledger).unwrap().is_ok());
    }
}

#[test]
fn stop_when_idle_ends_early() {
    let text = INFORMED_COMPRESSION.replace("rounds = 3", "rounds = 50\nstop_when_idle = true");
    let out = run_simulation(&config(&text)).unwrap();
    assert_eq!(out.report.summary().unwrap().rounds_run, 2);
    assert!(out.report.events().any(|e| e.kind == EventKind::Stopped));
}

#[test]
fn runs_are_byte_identical_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let mut c = config(INFORMED_COMPRESSION);
        c.agents.push(crowdlearn::sim::AgentConfig {
            id: "noise".into(),
            strategy: crowdlearn::sim::StrategyKind::Noise,
            belief: None,
            budget: None,
            step_scale: Some(0.1),
            cash: None,
        });
        c.ledger_path = Some(dir.path().join(format!("ledger{run}.jsonl")));
        c.report_path = Some(dir.path().join(format!("report{run}.jsonl")));
        run_simulation(&c).unwrap();
        let ledger = std::fs::read(c.ledger_path.as_ref().unwrap()).unwrap();
        let report = std::fs::read(c.report_path.as_ref().unwrap()).unwrap();
        outputs.push((ledger, report));
    }
    assert_eq!(outputs[0], outputs[1]);
    let path = dir.path().join("ledger0.jsonl");
    assert!(replay_verify(&path).unwrap().is_ok());
    let report = Report::from_jsonl(&std::fs::read_to_string(dir.path().join("report0.jsonl")).unwrap()).unwrap();
    assert!(report.summary().is_some());
}

#[test]
fn replay_flags_edited_costs_and_truncation() {
    let text = INFORMED_COMPRESSION.replace("strategy = \"informed\"", "strategy = \"noise\"");
    let out = run_simulation(&config(&text)).unwrap();
    let mut ledger = out.ledger.to_jsonl();
    let trade = out.ledger.trades().nth(1).unwrap().clone();
    let needle = format!("\"cost\":{}", serde_json::to_string(&trade.cost).unwrap());
    let edited = format!("\"cost\":{}", serde_json::to_string(&(trade.cost + 1e-6)).unwrap());
    assert_eq!(ledger.matches(&needle).count(), 1);
    ledger = ledger.replace(&needle, &edited);
    let verdict = verify_ledger(&Ledger::from_jsonl(&ledger).unwrap()).unwrap();
    assert_eq!(verdict.mismatch.unwrap().seq, Some(trade.seq));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.jsonl");
    let full = out.ledger.to_jsonl();
    let cut = &full[..full.trim_end().len() - 5];
    std::fs::write(&path, cut).unwrap();
    let lines = cut.lines().count();
    match replay_verify(&path) {
        Err(SimError::Mechanism(crowdlearn::mechanism::MechanismError::Parse { line, .. })) => assert_eq!(line, lines),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn header_tampering_is_an_error() {
    let out = run_simulation(&config(INFORMED_COMPRESSION)).unwrap();
    let text = out.ledger.to_jsonl().replacen("\"seed\":11", "\"seed\":12", 1);
    assert!(verify_ledger(&Ledger::from_jsonl(&text).unwrap()).is_err());
}
