"""Run the `sim` command line (python sim.py --help)."""

from app.main import cli

if __name__ == "__main__":
    cli(prog_name="sim")
