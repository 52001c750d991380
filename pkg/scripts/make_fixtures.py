"""Write every shipped fixture to configs/<name>.json."""

from pathlib import Path

from taxiq import fixtures
from taxiq.model import save_config

OUT = Path(__file__).resolve().parent.parent / "configs"


def main():
    OUT.mkdir(exist_ok=True)
    for name in fixtures.ALL:
        save_config(fixtures.get(name), OUT / f"{name}.json")
        print(OUT / f"{name}.json")


if __name__ == "__main__":
    main()
