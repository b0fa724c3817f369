pub mod autodiff;
pub mod corpus;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod par;
pub mod toy;
pub mod training;
pub mod weak_supervision;
