use gem_core::datasets::{LabeledDataset, SplitSpec};
use gem_core::distill::{distill, DistillOptions};
use gem_core::explainer::{explain, ExplainerModel};
use gem_core::gnn::{predict, GnnModel};
use gem_core::numerics::Checkpoint;
use std::path::Path;

#[test]
#[ignore]
fn probe_selfunción() {
    let out = Path::new("/tmp/gemprobe/out_ba");
    let ds = LabeledDataset::load_json(&out.join("dataset.json")).unwrap();
    let split = SplitSpec::load_json(&out.join("split.json")).unwrap();
    let gnn = GnnModel::from_checkpoint(&Checkpoint::load(&out.join("gnn.json")).unwrap()).unwrap();
    let exp =
        ExplainerModel::from_checkpoint(&Checkpoint::load(&out.join("explainer.json")).unwrap())
            .unwrap();
    let k = 9;
    let (mut acc_oracle, mut acc_gem, mut overlap_sum, mut n) = (0, 0, 0.0, 0);
    for &id in split.test_ids.iter() {
        let cg = ds.computation_graph(id, 3).unwrap();
        let y = ds.instance_label(id).unwrap();
        let d = distill(&gnn, &cg, y, &DistillOptions::new(k, true)).unwrap();
        let dsub = cg.restricted_to_edges(&d.kept_edge_list());
        let dp = predict(&gnn, &dsub).unwrap();
        let e = explain(&exp, &cg, k, true).unwrap();
        let ep = predict(&gnn, &e.subgraph).unwrap();
        let dset: std::collections::BTreeSet<_> = d.kept_edge_list().into_iter().collect();
        let eset: std::collections::BTreeSet<_> = e.edge_list().into_iter().collect();
        let inter = dset.intersection(&eset).count();
        acc_oracle += (dp.predicted_class == y) as usize;
        acc_gem += (ep.predicted_class == y) as usize;
        overlap_sum += inter as f64 / dset.len().max(1) as f64;
        n += 1;
        if n <= 5 {
            println!(
                "id {id}: y={y} oracle_pred={} ({} edges) gem_pred={} ({} edges) overlap {}/{}",
                dp.predicted_class,
                dset.len(),
                ep.predicted_class,
                eset.len(),
                inter,
                dset.len()
            );
        }
    }
    println!(
        "K={k}: oracle acc {:.3} gem acc {:.3} mean overlap {:.3}",
        acc_oracle as f64 / n as f64,
        acc_gem as f64 / n as f64,
        overlap_sum / n as f64
    );
}
