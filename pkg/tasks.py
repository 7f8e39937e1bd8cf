from invoke import Collection, task


@task
def requirements_dev(c):
    c.run("pip install -r requirements-dev.txt -r requirements.txt")


@task
def test_flake8(c):
    c.run("flake8 dygan/ tests/ tasks.py setup.py")


@task
def test_mypy(c):
    c.run("mypy dygan/")


@task
def test_python(c, slow=False):
    c.run("pytest" if slow else 'pytest -m "not slow"')


@task(test_flake8, test_mypy, test_python)
def test(c):
    pass


ns = Collection(requirements_dev, test_flake8, test_mypy, test_python, test)
