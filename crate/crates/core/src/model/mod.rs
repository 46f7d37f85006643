//! The learner: a frozen feature backbone producing `H x W x K` feature maps
//! and a trainable MLP head with hand-written reverse-mode gradients.

mod backbone;
mod features;
mod head;

pub use backbone::{Backbone, BackboneSpec, ConvBackbone, ConvLayer, FeatureTable};
pub use features::{read_feature_file, split_feature_records, write_feature_file, FeatureRecords};
pub use head::{task_classes, Activation, Dense, Head, HeadSpec, Sample, MASKED_LOGIT};

/// Backbone output `A`, channels-last.
pub type FeatureMap = crate::math::Tensor3;
