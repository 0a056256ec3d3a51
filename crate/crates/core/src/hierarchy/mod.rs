//! Class hierarchy, two-stage routing, HDA inference, automatic parent
//! assignment and the base-behaviour table.

mod assign;
mod model;
mod routing;

pub use assign::{analyze_base_behaviour, auto_assign, BehaviourRow, BehaviourTable};
pub use model::{ClassHierarchy, Slot, BACKGROUND};
pub use routing::{
    base_only_detections, group_categories, group_label, group_training_sets, hda_inference, route_proposals,
    GroupTrainingSet, HdaConfig, RoutedProposals,
};
