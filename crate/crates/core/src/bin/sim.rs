use std::process::ExitCode;

use lagtrans::driver::{parse_args, run_from_args, DriverError, Precision, RunOptions};

fn main() -> ExitCode {
    let args = match parse_args(std::env::args_os()) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    let opts = RunOptions {
        dispatch: args.dispatch.into(),
        print_report: true,
        ..RunOptions::default()
    };
    let result: Result<usize, DriverError> = match args.precision {
        Precision::F64 => run_from_args::<f64>(&args, &opts).map(|s| s.num_devices),
        Precision::F32 => run_from_args::<f32>(&args, &opts).map(|s| s.num_devices),
    };
    match result {
        Ok(n) => {
            eprintln!("sim: finished on {n} device(s)");
            ExitCode::SUCCESS
        }
        Err(DriverError::Dispatch(e)) => {
            for f in &e.failures {
                eprintln!("sim: device {}: {}", f.device_id, f.message);
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("sim: {e}");
            ExitCode::FAILURE
        }
    }
}
