//! Bundle persistence and split generation.
//!
//! A bundle directory holds:
//!   manifest.json   {"name","num_nodes","num_edges","num_features","num_classes"}
//!   graph.edges     one undirected edge per line, "src<TAB>dst", src < dst,
//!                   sorted, no duplicates, no self-loops
//!   features.csv    num_nodes lines of comma-separated decimals
//!   labels.txt      num_nodes lines, one integer each
//!   splits/<name>.json   {"train":[ids],"val":[ids],"test":[ids]}, disjoint

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{GraphBundle, SplitMasks};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::SparseMatrixCsr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::data(path, None, e.to_string()))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::data(path, None, e.to_string()))
}

/// Load and validate a bundle directory. The adjacency is symmetrized from
/// the once-listed undirected edge list; every named split is loaded.
pub fn load_bundle(dir: &Path) -> Result<GraphBundle> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::data(&manifest_path, None, e.to_string()))?;
    let manifest: BundleManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::data(&manifest_path, None, e.to_string()))?;

    // graph.edges
    let edges_path = dir.join("graph.edges");
    let mut edges = Vec::with_capacity(manifest.num_edges);
    for (idx, line) in read_lines(&edges_path)?.iter().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (src, dst) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::data(
                    &edges_path,
                    Some(lineno),
                    "expected 'src<TAB>dst'",
                ))
            }
        };
        let src: usize = src
            .parse()
            .map_err(|_| Error::data(&edges_path, Some(lineno), "bad source id"))?;
        let dst: usize = dst
            .parse()
            .map_err(|_| Error::data(&edges_path, Some(lineno), "bad destination id"))?;
        if src >= manifest.num_nodes || dst >= manifest.num_nodes {
            return Err(Error::data(
                &edges_path,
                Some(lineno),
                format!(
                    "edge ({src},{dst}) out of range for {} nodes",
                    manifest.num_nodes
                ),
            ));
        }
        if src == dst {
            return Err(Error::data(&edges_path, Some(lineno), "self-loop"));
        }
        if src > dst {
            return Err(Error::data(
                &edges_path,
                Some(lineno),
                "edges must be listed with src < dst",
            ));
        }
        edges.push((src, dst));
    }
    if edges.len() != manifest.num_edges {
        return Err(Error::data(
            &edges_path,
            None,
            format!(
                "manifest declares {} edges, file holds {}",
                manifest.num_edges,
                edges.len()
            ),
        ));
    }
    {
        let mut sorted = edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != edges.len() {
            return Err(Error::data(&edges_path, None, "duplicate edges"));
        }
    }
    let adjacency = SparseMatrixCsr::from_undirected_edges(manifest.num_nodes, &edges)
        .map_err(|e| Error::data(&edges_path, None, e.to_string()))?;

    // features.csv
    let features_path = dir.join("features.csv");
    let feature_lines = read_lines(&features_path)?;
    if feature_lines.len() != manifest.num_nodes {
        return Err(Error::data(
            &features_path,
            None,
            format!(
                "expected {} rows, found {}",
                manifest.num_nodes,
                feature_lines.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(manifest.num_nodes * manifest.num_features);
    for (idx, line) in feature_lines.iter().enumerate() {
        let lineno = idx + 1;
        let mut count = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::data(&features_path, Some(lineno), format!("bad value '{field}'"))
            })?;
            data.push(v);
            count += 1;
        }
        if count != manifest.num_features {
            return Err(Error::data(
                &features_path,
                Some(lineno),
                format!("expected {} values, found {count}", manifest.num_features),
            ));
        }
    }
    let features = DenseMatrix::from_vec(manifest.num_nodes, manifest.num_features, data)
        .map_err(|e| Error::data(&features_path, None, e.to_string()))?;

    // labels.txt
    let labels_path = dir.join("labels.txt");
    let label_lines = read_lines(&labels_path)?;
    if label_lines.len() != manifest.num_nodes {
        return Err(Error::data(
            &labels_path,
            None,
            format!(
                "expected {} labels, found {}",
                manifest.num_nodes,
                label_lines.len()
            ),
        ));
    }
    let mut labels = Vec::with_capacity(manifest.num_nodes);
    for (idx, line) in label_lines.iter().enumerate() {
        let lineno = idx + 1;
        let l: usize = line
            .trim()
            .parse()
            .map_err(|_| Error::data(&labels_path, Some(lineno), "bad label"))?;
        if l >= manifest.num_classes {
            return Err(Error::data(
                &labels_path,
                Some(lineno),
                format!("label {l} out of range for {} classes", manifest.num_classes),
            ));
        }
        labels.push(l);
    }

    // splits/*.json
    let mut splits = BTreeMap::new();
    let splits_dir = dir.join("splits");
    if splits_dir.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(&splits_dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let text =
                fs::read_to_string(&path).map_err(|e| Error::data(&path, None, e.to_string()))?;
            let file: SplitFile = serde_json::from_str(&text)
                .map_err(|e| Error::data(&path, None, e.to_string()))?;
            let masks =
                SplitMasks::from_ids(manifest.num_nodes, &file.train, &file.val, &file.test)
                    .map_err(|e| Error::data(&path, None, e.to_string()))?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("split")
                .to_string();
            splits.insert(name, masks);
        }
    }

    let bundle = GraphBundle::new(
        manifest.name.clone(),
        adjacency,
        features,
        labels,
        manifest.num_classes,
        splits,
    )
    .map_err(|e| Error::data(dir, None, e.to_string()))?;
    Ok(bundle)
}

fn format_feature(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.8e}")
    }
}

/// Write a bundle directory per the schema above. The edge list is written
/// sorted with src < dst; the splits directory is omitted when the bundle
/// has no named splits.
pub fn save_bundle(bundle: &GraphBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;

    let manifest = BundleManifest {
        name: bundle.name.clone(),
        num_nodes: bundle.num_nodes(),
        num_edges: bundle.num_edges(),
        num_features: bundle.features.cols(),
        num_classes: bundle.num_classes,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("static schema");
    manifest_json.push('\n');
    fs::write(dir.join("manifest.json"), manifest_json)?;

    let mut edges = bundle.adjacency.upper_triangle_edges();
    edges.sort_unstable();
    let mut w = BufWriter::new(File::create(dir.join("graph.edges"))?);
    for (u, v) in edges {
        writeln!(w, "{u}\t{v}")?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("features.csv"))?);
    for i in 0..bundle.num_nodes() {
        let row = bundle.features.row(i);
        let line: Vec<String> = row.iter().map(|&v| format_feature(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("labels.txt"))?);
    for &l in &bundle.labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;

    if !bundle.splits.is_empty() {
        let splits_dir = dir.join("splits");
        fs::create_dir_all(&splits_dir)?;
        for (name, masks) in &bundle.splits {
            let file = SplitFile {
                train: SplitMasks::ids(&masks.train),
                val: SplitMasks::ids(&masks.val),
                test: SplitMasks::ids(&masks.test),
            };
            let mut json = serde_json::to_string_pretty(&file).expect("static schema");
            json.push('\n');
            fs::write(splits_dir.join(format!("{name}.json")), json)?;
        }
    }
    Ok(())
}

/// Draw a split: exactly `labels_per_class` train nodes per class, then
/// `val_size` validation and `test_size` test nodes from the remainder.
///
/// Per class the seeded shuffle is consumed once and its prefix taken, so
/// for `labels_per_class < 20` the train set nests inside the seed-matched
/// 20-per-class set, and the first 20 (or all, if fewer) shuffled nodes of
/// each class are withheld from val/test regardless of `labels_per_class`,
/// keeping val/test stable across label budgets.
pub fn make_splits(
    bundle: &GraphBundle,
    labels_per_class: usize,
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<SplitMasks> {
    if labels_per_class == 0 {
        return Err(Error::config("labels_per_class must be at least 1"));
    }
    let n = bundle.num_nodes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); bundle.num_classes];
    for (i, &l) in bundle.labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut train = vec![false; n];
    let mut reserved = vec![false; n];
    for (class, nodes) in by_class.iter().enumerate() {
        if nodes.len() < labels_per_class {
            return Err(Error::config(format!(
                "class {class} has only {} nodes, need {labels_per_class}",
                nodes.len()
            )));
        }
        let mut shuffled = nodes.clone();
        let mut class_rng = rng::seeded(seed ^ ((class as u64 + 1) << 32));
        rng::shuffle(&mut shuffled, &mut class_rng);
        let reserve = labels_per_class.max(20).min(shuffled.len());
        for &u in &shuffled[..labels_per_class] {
            train[u] = true;
        }
        for &u in &shuffled[..reserve] {
            reserved[u] = true;
        }
    }

    let mut eligible: Vec<usize> = (0..n).filter(|&u| !reserved[u]).collect();
    if eligible.len() < val_size + test_size {
        return Err(Error::config(format!(
            "only {} nodes available for val+test, need {}",
            eligible.len(),
            val_size + test_size
        )));
    }
    let mut pool_rng = rng::seeded(seed);
    rng::shuffle(&mut eligible, &mut pool_rng);
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for &u in &eligible[..val_size] {
        val[u] = true;
    }
    for &u in &eligible[val_size..val_size + test_size] {
        test[u] = true;
    }
    SplitMasks::new(train, val, test)
}
