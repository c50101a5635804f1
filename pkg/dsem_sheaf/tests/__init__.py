import os.path as path

this_dir, _ = path.split(__file__)


def data_file(name):
    return path.join(this_dir, "data", name)


def check_viz(folder):
    return path.isfile(path.join(folder, "index.html"))
