use pifm_wasm_demo::Demo;

#[test]
fn build_train_and_reconstruct() {
    let mut demo = Demo::new(3, 8, 0.8, 0.1, 0.5).ok().unwrap();
    let loss = demo.train(2).ok().unwrap();
    assert!(loss.is_finite());
    assert_eq!(demo.epochs(), 2);
    let out: serde_json::Value = serde_json::from_str(&demo.reconstruct(4, 0.1).ok().unwrap()).unwrap();
    for key in ["truth", "mask", "prior", "flow"] {
        assert_eq!(out[key].as_array().unwrap().len(), 8, "{key}");
    }
    assert!(out["prior_auc"].is_number() || out["prior_auc"].is_null());
    let again: serde_json::Value = serde_json::from_str(&demo.reconstruct(4, 0.1).ok().unwrap()).unwrap();
    assert_ne!(out["truth"], again["truth"]);
}
