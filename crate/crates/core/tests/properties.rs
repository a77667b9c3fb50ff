#[path = "suites/props.rs"]
mod props;

#[test]
fn plan_contract_round_trip() {
    props::run("plan_contract_round_trip");
}

#[test]
fn replace_touches_only_its_target() {
    props::run("replace_touches_only_its_target");
}

#[test]
fn move_then_move_back_is_identity() {
    props::run("move_then_move_back_is_identity");
}

#[test]
fn fail_fast_runs_exactly_k_plus_one_commands() {
    props::run("fail_fast_runs_exactly_k_plus_one_commands");
}

#[test]
fn validity_comes_only_from_clean_traces() {
    props::run("validity_comes_only_from_clean_traces");
}

#[test]
fn discovery_is_deterministic() {
    props::run("discovery_is_deterministic");
}
