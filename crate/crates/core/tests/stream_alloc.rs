//! Steady-state streaming must not touch the heap.

use ankleband::imu::synth::{generate_synthetic, SynthSpec};
use ankleband::imu::NormalizationConstants;
use ankleband::nn::ModelConfig;
use ankleband::runtime::{StreamMode, StreamSession};
use ankleband::training::init_weights;
use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

struct Counting;

static ALLOCS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::SeqCst);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::SeqCst);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn push_does_not_allocate() {
    let (rec, _) = generate_synthetic(&SynthSpec::doubles(0, 2), 3).unwrap();
    let model = Arc::new(init_weights(ModelConfig::default(), 1).unwrap());
    for mode in [
        StreamMode::EverySample,
        StreamMode::SkipWhenBusy { device_hz: 75.0 },
    ] {
        let mut session =
            StreamSession::new(model.clone(), NormalizationConstants::default(), mode);
        let mut bad = rec.samples()[100];
        bad.gyro[2] = f32::INFINITY;
        let mut outputs = 0usize;
        // This is the only test in the binary, so no other thread allocates meanwhile.
        let before = ALLOCS.load(Ordering::SeqCst);
        for (i, s) in rec.samples().iter().enumerate() {
            let s = if i == 500 { &bad } else { s };
            if session.push(s).unwrap().is_some() {
                outputs += 1;
            }
        }
        let after = ALLOCS.load(Ordering::SeqCst);
        assert!(outputs > 1000, "{mode:?}: only {outputs} windows");
        assert_eq!(after - before, 0, "{mode:?}: push allocated");
        assert_eq!(session.dropped(), 1);
    }
}
