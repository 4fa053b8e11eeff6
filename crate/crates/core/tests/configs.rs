use loopshaper::ccp::SynthesisConfig;

#[test]
fn shipped_paper_config_is_the_published_setup() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/paper.json")).unwrap();
    assert_eq!(SynthesisConfig::from_json(&text).unwrap(), SynthesisConfig::paper());
}

#[test]
fn shipped_load_step_scenario_is_the_preset() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/load_step.json")).unwrap();
    let sc: loopshaper::sim::SimScenario = serde_json::from_str(&text).unwrap();
    assert_eq!(sc, loopshaper::sim::scenario_b());
}
