//! Knowledge-based hierarchical POMDP task planning.

pub mod executive;
pub mod grounding;
pub mod hierarchy;
pub mod kb;
pub mod navbench;
pub mod par;
pub mod pbvi;
pub mod pomdp;
pub mod seeds;
