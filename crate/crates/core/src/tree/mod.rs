//! Plaintext decision trees: training, quantization, complete padding and the
//! inference oracle every encrypted run is checked against.

pub mod cart;
pub mod complete;
pub mod plain;
pub mod quantize;

pub use cart::{accuracy, best_split, train_cart, Dataset, Split};
pub use complete::{
    complete_pad, plaintext_infer, random_complete_tree, CompleteNode, CompleteTree, PredictionPath, MAX_DEPTH,
};
pub use plain::{random_plain_tree, PlainNode, PlainTree};
pub use quantize::{DomainPolicy, FeatureMap, Quantizer};
