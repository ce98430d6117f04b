use saferl::demos::SvbController;
use saferl::env::{Env, EnvConfig};

fn main() {
    let cfg = EnvConfig::named("svb").unwrap();
    let mut env = Env::new(cfg.clone()).unwrap();
    let mut ctrl = SvbController::for_env(&cfg);
    env.reset(0);
    loop {
        let s = env.state();
        let a = ctrl.action(env.t(), s);
        let tr = env.step(a).unwrap();
        println!(
            "t={:3} s=({:6.2},{:6.2}) mode={:?} hdg={:6.2} a=({:5.2},{:5.2}) r={} c={}",
            env.t() - 1,
            s.x,
            s.y,
            ctrl.mode(),
            ctrl.last_heading.unwrap_or(0.0),
            a[0],
            a[1],
            tr.r,
            tr.c
        );
        if tr.done {
            println!("done: goal={} violated={}", tr.r == 0.0, tr.c);
            break;
        }
    }
}
