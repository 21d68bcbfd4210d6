import os, sys
sys.path.append(os.path.dirname(os.path.dirname(__file__)))
from incomplete_mle.models.params import worked_example
from incomplete_mle.storage.files import save_params


def write(path="model.json"):
    theta = worked_example()
    save_params(path, theta)
    print(f"Wrote p={theta.p}, M={theta.M} model ({theta.layout.d} free parameters) to {path}")


if __name__ == '__main__':
    write(*sys.argv[1:2])
