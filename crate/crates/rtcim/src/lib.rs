//! Bit-accurate simulator of a racetrack-memory compute-in-memory unit.
//!
//! The memory is organised as domain-block clusters (DBCs): 512 nanowires
//! shifting in lock step under two access ports, with a transverse read that
//! senses the ones count of a 7-row window in one device operation. On top of
//! that sit column-parallel carry-save adders, a bit-serial multiplier, a
//! software-pipelined floating-point unit, and convolution kernels, all
//! expressed as microprograms over one shared instruction set so every
//! arithmetic result and every cost number comes from the same machine.
//!
//! Start with [`device::Dbc`] for the memory model, [`exec::Machine`] for the
//! instruction set, [`alu`] and [`fp`] for arithmetic, [`kernels`] for the
//! convolution layer pieces, and [`cost`] for folding event ledgers into
//! latency, energy and workload throughput.

pub mod alu;
pub mod cim;
pub mod config;
pub mod cost;
pub mod device;
pub mod error;
pub mod exec;
pub mod fp;
pub mod kernels;
pub mod row;
pub mod verify;
