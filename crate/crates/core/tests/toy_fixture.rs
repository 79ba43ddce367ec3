use std::collections::BTreeMap;
use std::path::PathBuf;

use vqd::clustering::ClusterModel;
use vqd::io::{load_annotations, load_predictions, Dataset, Role, RunConfig};
use vqd::metrics::AccuracyMetric;
use vqd::model::Normalization;
use vqd::report::{build_cluster_table, cluster_table_csv, read_assignments, ReportContext};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/toy")
        .join(name)
}

fn toy_dataset() -> (Dataset, RunConfig) {
    let ann = load_annotations(&fixture("annotations.jsonl"), true).unwrap();
    let mut ds = Dataset::new(Some(ann), None);
    let mut roles = RunConfig::default();
    for (id, role) in [
        ("toy_i", Role::I),
        ("toy_q", Role::Q),
        ("toy_qi", Role::QI),
        ("alpha", Role::Evaluated),
        ("beta", Role::Evaluated),
    ] {
        let p =
            load_predictions(&fixture(&format!("pred_{id}.jsonl")), Some(id), None, true).unwrap();
        ds.add_predictions(id, p).unwrap();
        roles.set(id, role);
    }
    (ds, roles)
}

#[test]
fn cluster_table_matches_golden() {
    let (ds, roles) = toy_dataset();
    let model = ClusterModel::load(&fixture("model.json")).unwrap();
    let assignments = read_assignments(&fixture("assignments.csv"), &model).unwrap();
    let ctx = ReportContext {
        dataset: &ds,
        roles: &roles,
        metric: AccuracyMetric::Simple,
        normalization: Normalization::Basic,
    };
    let table = build_cluster_table(&ctx, &model, &assignments, &BTreeMap::new()).unwrap();
    let golden = std::fs::read_to_string(fixture("cluster_table.golden.csv")).unwrap();
    assert_eq!(cluster_table_csv(&table), golden);
    assert_eq!(table.warnings.total(), 0);
}

#[test]
fn toy_model_file_round_trips() {
    let model = ClusterModel::load(&fixture("model.json")).unwrap();
    let again = ClusterModel::from_json(&model.to_json()).unwrap();
    assert_eq!(model, again);
}
