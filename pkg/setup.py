"""
Dynamic-convolution GAN voice conversion generator with hand-written gradients.
"""
import re
import ast
from setuptools import setup, find_packages


_version_re = re.compile(r'__version__\s+=\s+(.*)')

with open('dygan/__init__.py', 'rb') as f:
    version = str(ast.literal_eval(_version_re.search(
        f.read().decode('utf-8')).group(1)))

setup(
    name='dygan-vc',
    version=version,
    license='MIT',
    description='Dynamic convolution voice conversion generator, discriminator and tooling in numpy',
    long_description=__doc__,
    packages=find_packages(exclude=['tests']),
    package_data={'dygan': ['py.typed']},
    include_package_data=True,
    install_requires=[
        'numpy<2.0,>=1.22',
        'click<9.0,>=8.0',
        'Jinja2<4.0,>=3.0',
        'PyYAML<7.0,>=5.4',
        'python-json-logger<3.0,>=2.0',
    ],
    entry_points={
        'console_scripts': [
            'dygan=dygan.cli:main',
        ],
    },
    python_requires=">=3.8",
)
