use std::ffi::CStr;
use std::ptr;

use gpob_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        gpob_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn header_lists_every_entry_point() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gpob.h")).unwrap();
    for f in [
        "gpob_status_string", "gpob_last_error", "gpob_local_mach_speed", "gpob_flow_solve", "gpob_flow_free",
        "gpob_flow_max_boundary_speed2", "gpob_flow_shape", "gpob_flow_copy_phi", "gpob_wave_solve",
        "gpob_wave_free", "gpob_wave_core",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f}");
    }
    assert!(h.contains("typedef struct GpobFlow GpobFlow;"));
    assert!(h.contains("GPOB_STATUS_NULL_POINTER = 1"));
    assert!(h.contains("GPOB_STATUS_IO = 9"));
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    unsafe {
        assert_eq!(gpob_local_mach_speed(0.5, ptr::null_mut()), GpobStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut c = 0.0;
        assert_eq!(gpob_local_mach_speed(1.5, &mut c), GpobStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert_eq!(gpob_local_mach_speed(0.25, &mut c), GpobStatus::Ok);
        assert!((c - 2.0 * 0.5 / 0.75f64.sqrt()).abs() < 1e-14);

        let mut flow = ptr::null_mut();
        let s = gpob_flow_solve(GpobShape::Disk, -1.0, 0.0, 32, 32, 8.0, 1.05, 0.1, &mut flow);
        assert_ne!(s, GpobStatus::Ok);
        assert!(flow.is_null());
        gpob_flow_free(ptr::null_mut());
        gpob_wave_free(ptr::null_mut());
        let msg = CStr::from_ptr(gpob_status_string(GpobStatus::BufferTooSmall));
        assert_eq!(msg.to_str().unwrap(), "buffer too small");
    }
}

#[test]
fn disk_flow_round_trip() {
    unsafe {
        let mut flow = ptr::null_mut();
        let s = gpob_flow_solve(GpobShape::Disk, 1.0, 1.0, 48, 64, 8.0, 1.05, 0.1, &mut flow);
        assert_eq!(s, GpobStatus::Ok, "{}", last_error());
        let (mut nr, mut na) = (0usize, 0usize);
        assert_eq!(gpob_flow_shape(flow, &mut nr, &mut na), GpobStatus::Ok);
        assert_eq!((nr, na), (48, 64));
        let mut m = 0.0;
        assert_eq!(gpob_flow_max_boundary_speed2(flow, &mut m), GpobStatus::Ok);
        // Incompressible limit is 4δ²; compressibility raises it.
        assert!(m > 0.04 && m < 0.06, "{m}");
        let mut small = vec![0.0; 10];
        assert_eq!(gpob_flow_copy_phi(flow, small.as_mut_ptr(), small.len()), GpobStatus::BufferTooSmall);
        let mut phi = vec![f64::NAN; nr * na];
        assert_eq!(gpob_flow_copy_phi(flow, phi.as_mut_ptr(), phi.len()), GpobStatus::Ok);
        assert!(phi.iter().all(|v| v.is_finite()));
        gpob_flow_free(flow);
    }
}

#[test]
fn wave_core_position() {
    unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(gpob_wave_solve(0.7, 8.0, 0.25, &mut w), GpobStatus::Ok, "{}", last_error());
        let (mut d, mut r) = (0.0, 1.0);
        assert_eq!(gpob_wave_core(w, &mut d, &mut r), GpobStatus::Ok);
        assert!(d > 0.5 && d < 3.0, "{d}");
        assert!(r < 1e-8, "{r}");
        gpob_wave_free(w);
    }
}
