use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{ItemFailure, MetricRun, RunSource};
use crate::dataset::{BenchmarkItem, Dimension, Manifest};
use crate::metrics::{to_gray, MetricError, MetricKind, MetricParams};

fn score_item(
    manifest: &Manifest,
    item: &BenchmarkItem,
    metric: MetricKind,
    params: &MetricParams,
) -> Result<(f64, (usize, usize)), MetricError> {
    let source = to_gray(&manifest.resolve(&item.source_image))?;
    let edited = to_gray(&manifest.resolve(&item.edited_image))?;
    let value = metric.compute(&source, &edited, params)?;
    Ok((value.value, (edited.width(), edited.height())))
}

/// Scores every item by comparing its source and edited images with a
/// reference metric. The single value is recorded under all three
/// dimensions. Items that fail are listed in `failures` and the run goes on.
pub fn run_builtin(metric: MetricKind, manifest: &Manifest, params: &MetricParams) -> MetricRun {
    let outcomes: Vec<_> = manifest
        .items
        .par_iter()
        .map(|item| (item, score_item(manifest, item, metric, params)))
        .collect();

    let mut run = MetricRun::new(metric.as_str(), RunSource::Builtin);
    let mut resolutions = BTreeSet::new();
    for (item, outcome) in outcomes {
        match outcome {
            Ok((value, size)) => {
                resolutions.insert(size);
                for dimension in Dimension::ALL {
                    run.predictions
                        .insert((item.item_id.clone(), dimension), value);
                }
            }
            Err(err) => run.failures.push(ItemFailure {
                item_id: item.item_id.clone(),
                dimension: None,
                error: err.to_string(),
            }),
        }
    }
    let listed: Vec<String> = resolutions
        .iter()
        .map(|(w, h)| format!("{w}x{h}"))
        .collect();
    run.metadata.insert("resolution".into(), format!("native ({})", listed.join(", ")));
    run.metadata
        .insert("higher_is_better".into(), metric.higher_is_better().to_string());
    run
}
