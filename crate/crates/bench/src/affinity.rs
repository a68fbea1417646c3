//! Best-effort round-robin thread pinning. Failures are ignored.

/// Pins the calling thread to the `slot`-th CPU it is allowed to run on,
/// wrapping around. Returns whether a pin was applied.
#[cfg(target_os = "linux")]
pub fn pin_current(slot: usize) -> bool {
    // SAFETY: cpu_set_t is plain data; the calls only read and write it.
    unsafe {
        let mut allowed: libc::cpu_set_t = std::mem::zeroed();
        let size = std::mem::size_of::<libc::cpu_set_t>();
        if libc::sched_getaffinity(0, size, &mut allowed) != 0 {
            return false;
        }
        let cpus: Vec<usize> = (0..libc::CPU_SETSIZE as usize)
            .filter(|&c| libc::CPU_ISSET(c, &allowed))
            .collect();
        if cpus.is_empty() {
            return false;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpus[slot % cpus.len()], &mut set);
        libc::sched_setaffinity(0, size, &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current(_slot: usize) -> bool {
    false
}

/// Hardware threads available to this process.
pub fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
