//! Discrete-event simulation and analysis of carbon-aware scheduling for
//! DAG-structured data-processing jobs.
//!
//! The pipeline is: load or generate a [`workload::WorkloadSpec`], load a
//! [`carbon::CarbonTrace`], pick a [`policy::PolicySpec`], run
//! [`engine::simulate`], then feed the resulting
//! [`engine::ScheduleRecord`] to [`analysis`].

pub mod analysis;
pub mod cap;
pub mod carbon;
pub mod engine;
pub mod experiment;
pub mod par;
pub mod pcaps;
pub mod policy;
pub mod schedulers;
pub mod workload;
