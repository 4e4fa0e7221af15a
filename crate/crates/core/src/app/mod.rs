//! Application layer: file formats, the UAV swarm example, simulation,
//! post-hoc verification and reporting.

pub mod io;
pub mod report;
pub mod simulate;
pub mod uav;
pub mod verify;

pub use io::{read_certificates, read_network, write_network, CertificateFile, NetworkFile};
pub use report::{emit_report, Report, ReportRow, RunSummary};
pub use simulate::{simulate_network, Simulation, SimulationSpec};
pub use uav::{build_uav_network, UavParams};
pub use verify::{verify_certificate, VerificationReport};
