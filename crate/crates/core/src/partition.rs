//! Static division of the particle index space among devices.

use std::ops::Range;

use thiserror::Error;

/// Half-open particle index interval `[start, end)` owned by one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkRange {
    pub device_id: usize,
    pub start: usize,
    pub end: usize,
}

impl WorkRange {
    pub fn new(device_id: usize, start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self {
            device_id,
            start,
            end,
        }
    }

    /// The whole ensemble as a single range.
    pub fn full(np: usize) -> Self {
        Self::new(0, 0, np)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn indices(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn overlaps(&self, other: &WorkRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("number of devices must be at least 1")]
    NoDevices,
    #[error("device id {device_id} out of range for {num_devices} devices")]
    DeviceOutOfRange { device_id: usize, num_devices: usize },
}

/// Contiguous block split: the first `np % num_devices` devices receive one
/// extra particle.
pub fn calc_device_workload_range(
    np: usize,
    num_devices: usize,
    device_id: usize,
) -> Result<WorkRange, PartitionError> {
    if num_devices == 0 {
        return Err(PartitionError::NoDevices);
    }
    if device_id >= num_devices {
        return Err(PartitionError::DeviceOutOfRange {
            device_id,
            num_devices,
        });
    }
    let base = np / num_devices;
    let rem = np % num_devices;
    let size = base + usize::from(device_id < rem);
    let start = device_id * base + device_id.min(rem);
    Ok(WorkRange::new(device_id, start, start + size))
}

/// Ranges for every device, ordered by device id.
pub fn all_ranges(np: usize, num_devices: usize) -> Result<Vec<WorkRange>, PartitionError> {
    (0..num_devices)
        .map(|d| calc_device_workload_range(np, num_devices, d))
        .collect()
}
