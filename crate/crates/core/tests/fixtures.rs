//! The bundled graph and series are reproducible from the distance list.

use std::path::{Path, PathBuf};

use dcrnn::data::{load_series, synth_diffusion, SynthConfig};
use dcrnn::graph::{build_adjacency, read_distances, read_node_ids};
use dcrnn::WeightedDigraph;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn bundled_graph() -> WeightedDigraph {
    let d = read_distances(&fixtures().join("distances.csv")).unwrap();
    let ids = read_node_ids(&fixtures().join("nodes.txt")).unwrap();
    build_adjacency(&d, &ids, 3000.0).unwrap()
}

#[test]
fn bundled_graph_matches_distances() {
    let built = bundled_graph();
    let saved = WeightedDigraph::load(&fixtures().join("graph.txt")).unwrap();
    assert_eq!(built, saved);
    assert_eq!(built.n_nodes(), 8);
    // 8 forward ring, 8 backward ring and 4 chords; the 4200 chord is cut
    assert_eq!(built.weights().nnz(), 20);
}

#[test]
fn bundled_series_matches_generator() {
    let regenerated = synth_diffusion(&bundled_graph(), &SynthConfig::default()).unwrap();
    let saved = load_series(&fixtures().join("series.csv"), None).unwrap();
    assert_eq!(saved, regenerated);
    assert_eq!(saved.n_steps(), 2000);
}
