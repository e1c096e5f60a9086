pub mod model;
pub mod semantics;
pub mod solver;
pub mod queries;
pub mod explain;
pub mod bundled;
pub mod bench;
