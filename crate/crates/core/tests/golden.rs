#[path = "suites/golden.rs"]
mod golden;

#[test]
fn commands_json_is_stable() {
    golden::commands_json_is_stable();
}

#[test]
fn run_report_is_stable() {
    golden::run_report_is_stable();
}

#[test]
fn trace_is_stable() {
    golden::trace_is_stable();
}

#[test]
fn contract_has_exactly_the_eight_files() {
    golden::contract_has_exactly_the_eight_files();
}
