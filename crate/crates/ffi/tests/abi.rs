use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use vnfactor_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { vn_string_free(s) };
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(vn_last_error()) }.to_str().unwrap().to_owned()
}

#[test]
fn k_constants_and_version() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { vn_k_constant(2, &mut out) }, VnStatus::Ok);
    assert_eq!(take(out), "172");
    assert_eq!(unsafe { vn_k_constant(0, &mut out) }, VnStatus::InputError);
    assert!(last_error().contains("p ≥ 1"));
    let v = unsafe { CStr::from_ptr(vn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn bounds_report_handle() {
    let mut rep = ptr::null_mut();
    let s = unsafe { vn_bounds(c("qi").as_ptr(), c("3").as_ptr(), 4, 1, 9, &mut rep) };
    assert_eq!(s, VnStatus::Ok, "{}", last_error());
    assert!(unsafe { vn_report_all_pass(rep) });
    assert!(unsafe { vn_report_assertion_count(rep) } > 0);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { vn_report_to_json(rep, &mut json) }, VnStatus::Ok);
    let text = take(json);
    assert!(text.contains("vnfactor.run-report/1") && !text.contains("timing"));
    unsafe { vn_report_free(rep) };
    assert!(!unsafe { vn_report_all_pass(ptr::null()) });
}

#[test]
fn gen_stabilize_and_pair() {
    let mut inst = ptr::null_mut();
    let s = unsafe { vn_gen(c("stabilization").as_ptr(), c("q").as_ptr(), 2, 8, 1, 1, false, 5, &mut inst) };
    assert_eq!(s, VnStatus::Ok, "{}", last_error());
    let inst = c(&take(inst));
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { vn_stabilize(inst.as_ptr(), &mut rep) }, VnStatus::Ok);
    assert!(unsafe { vn_report_all_pass(rep) });
    unsafe { vn_report_free(rep) };

    let mut pair = ptr::null_mut();
    assert_eq!(unsafe { vn_gen(c("pair").as_ptr(), c("qi").as_ptr(), 0, 2, 0, 0, false, 1, &mut pair) }, VnStatus::Ok);
    let pair = c(&take(pair));
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { vn_star_equiv(pair.as_ptr(), &mut rep) }, VnStatus::Ok);
    unsafe { vn_report_free(rep) };

    assert_eq!(unsafe { vn_gen(c("other").as_ptr(), c("q").as_ptr(), 1, 2, 0, 0, false, 1, &mut ptr::null_mut()) }, VnStatus::InputError);
}

#[test]
fn chain_handle_and_errors() {
    let mut ch = ptr::null_mut();
    let s = unsafe { vn_halperin(c("q").as_ptr(), c("1/2").as_ptr(), 1, 27720, 0, &mut ch) };
    assert_eq!(s, VnStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { vn_chain_stage_count(ch) }, 1);
    assert!(unsafe { vn_chain_all_hold(ch) });
    let (mut p, mut q) = (0u64, 0u64);
    assert_eq!(unsafe { vn_chain_stage(ch, 1, &mut p, &mut q) }, VnStatus::Ok);
    assert!(2 * p > q && p < q);
    assert_eq!(unsafe { vn_chain_stage(ch, 5, &mut p, &mut q) }, VnStatus::InputError);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { vn_chain_to_json(ch, &mut json) }, VnStatus::Ok);
    assert!(take(json).contains("\"doubling\""));
    unsafe { vn_chain_free(ch) };

    let s = unsafe { vn_halperin(c("q").as_ptr(), c("1/3").as_ptr(), 1, 30, 0, &mut ch) };
    assert_eq!(s, VnStatus::Infeasible);
    assert!(last_error().contains("n = 150"));
    assert_eq!(unsafe { vn_halperin(c("r").as_ptr(), c("1/3").as_ptr(), 1, 30, 0, &mut ch) }, VnStatus::InputError);
    assert_eq!(unsafe { vn_halperin(ptr::null(), c("1/3").as_ptr(), 1, 30, 0, &mut ch) }, VnStatus::NullPointer);
    assert_eq!(unsafe { vn_stabilize(c("{").as_ptr(), &mut ptr::null_mut()) }, VnStatus::InputError);
    assert!(last_error().contains("line 1"));
}

#[test]
fn generated_header_is_valid_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/vnfactor.h")).unwrap();
    for f in ["vn_bounds", "vn_halperin", "vn_chain_free", "vn_report_free", "vn_last_error", "VN_STATUS_INFEASIBLE = 3"] {
        assert!(header.contains(f), "header lacks {f}");
    }
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("tests/c/smoke.c"))
        .output()
        .expect("a C compiler on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_against_the_static_library() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libvnfactor_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let exe = std::env::temp_dir().join(format!("vnfactor-smoke-{}", std::process::id()));
    let out = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    let _ = std::fs::remove_file(&exe);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stdout));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.starts_with("12112\n42/77 1\n3 infeasible"), "{stdout}");
}
