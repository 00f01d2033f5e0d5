//! ROC AUC with ties, threshold metrics, and Cohen's d.
//!
//! cargo run --example metrics

use atgat::metrics::{cohens_d, roc_auc, threshold_metrics, MetricRecord};

fn main() -> atgat::Result<()> {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0.0, 0.0, 1.0, 1.0];
    println!("AUC {:.4}", roc_auc(&scores, &labels)?);
    println!("all tied: AUC {:.4}", roc_auc(&[0.3; 4], &labels)?);
    println!("{:?}", threshold_metrics(&scores, &labels, 0.5)?);
    print!("{}", MetricRecord::evaluate(&scores, &labels, 0.5)?.to_table());

    let atgat_w = [0.913, 0.905, 0.921, 0.917, 0.909];
    let b_gat = [0.861, 0.874, 0.852, 0.869, 0.866];
    println!("d(ATGAT-W, B-GAT) = {:.3}", cohens_d(&atgat_w, &b_gat)?);
    println!("d(B-GAT, ATGAT-W) = {:.3}", cohens_d(&b_gat, &atgat_w)?);
    Ok(())
}
