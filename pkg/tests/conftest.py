import numpy as np
import pytest

from harmonic_nav.world import Circle, Squircle, ForestWorld
from harmonic_nav.transforms import TransformStack
from harmonic_nav.oriented import OrientedField


def make_empty_disk():
    world = ForestWorld(Circle(np.array([0.0, 0.0]), 2.0,
                               is_workspace_boundary=True))
    goal = np.array([1.2, 0.4])
    return world, goal, 0.5


def make_three_obstacles():
    world = ForestWorld(Squircle(np.array([0.0, 0.0]), np.array([2.0, 1.6]),
                                 0.95, is_workspace_boundary=True))
    world.insert_obstacle(Squircle(np.array([-0.9, 0.5]),
                                   np.array([0.45, 0.18]), 0.9))
    world.insert_obstacle(Circle(np.array([0.8, -0.6]), 0.3))
    world.insert_obstacle(Squircle(np.array([0.9, 0.7]),
                                   np.array([0.25, 0.25]), 0.5))
    goal = np.array([1.4, -1.1])
    return world, goal, 0.7


def make_depth_two_tree():
    world = ForestWorld(Circle(np.array([0.0, 0.0]), 2.2,
                               is_workspace_boundary=True))
    world.insert_obstacle(Squircle(np.array([-0.6, 0.0]),
                                   np.array([0.5, 0.22]), 0.9))
    world.insert_obstacle(Squircle(np.array([-0.25, 0.3]),
                                   np.array([0.2, 0.25]), 0.6))
    world.insert_obstacle(Circle(np.array([1.1, -0.7]), 0.28))
    goal = np.array([1.5, 0.9])
    return world, goal, -2.0


@pytest.fixture(scope="session")
def empty_disk():
    return make_empty_disk()


@pytest.fixture(scope="session")
def three_obstacles():
    return make_three_obstacles()


@pytest.fixture(scope="session")
def depth_two_tree():
    return make_depth_two_tree()


@pytest.fixture(scope="session")
def three_field(three_obstacles):
    world, goal, heading = three_obstacles
    return OrientedField(TransformStack(world, goal), goal_heading=heading)


@pytest.fixture(scope="session")
def tree_field(depth_two_tree):
    world, goal, heading = depth_two_tree
    return OrientedField(TransformStack(world, goal), goal_heading=heading)


def make_nested_twenty():
    """Twenty-obstacle forest with branches up to three levels deep.

    Returns the world, a clear goal and a disjoint circle whose insertion
    lands as a new independent obstacle.  Used by the update-versus-rebuild
    timing checks, where the nesting keeps the rebuild cost representative.
    """
    def sq(cx, cy, ax, ay, k):
        return Squircle(np.array([cx, cy]), np.array([ax, ay]), k)

    world = ForestWorld(Circle(np.array([0.0, 0.0]), 6.0,
                               is_workspace_boundary=True))
    goal = np.array([5.0, 0.0])
    for shape in [
        sq(-3.0, 2.0, 0.6, 0.4, 0.9),
        sq(-2.45, 2.35, 0.25, 0.2, 0.7),
        sq(-2.3, 2.55, 0.12, 0.1, 0.5),
        sq(-2.21, 2.62, 0.055, 0.05, 0.5),
        sq(2.5, 2.8, 0.55, 0.35, 0.85),
        sq(3.0, 3.05, 0.22, 0.18, 0.6),
        sq(-3.2, -2.4, 0.5, 0.5, 0.9),
        sq(-2.75, -2.2, 0.2, 0.22, 0.7),
        sq(1.8, -3.0, 0.6, 0.3, 0.8),
        sq(2.35, -2.85, 0.2, 0.15, 0.6),
        sq(0.3, 3.9, 0.4, 0.3, 0.9),
        sq(0.65, 4.1, 0.15, 0.12, 0.5),
        Circle(np.array([-0.8, 0.9]), 0.35),
        Circle(np.array([0.6, -1.3]), 0.3),
        sq(-1.6, -0.6, 0.35, 0.25, 0.7),
        Circle(np.array([2.2, 0.9]), 0.3),
        sq(3.6, -1.2, 0.3, 0.3, 0.6),
        Circle(np.array([-4.2, 0.2]), 0.3),
        sq(-0.2, -3.8, 0.35, 0.3, 0.8),
        Circle(np.array([4.0, 1.8]), 0.25),
    ]:
        world.insert_obstacle(shape)
    new_shape = Circle(np.array([-3.9, 3.9]), 0.3)
    return world, goal, new_shape


def grow_random_world(seed, n_obstacles=None, depth_cap=3):
    """Random obstacle-forest growth sequence inside a disk workspace.

    Returns the grown world, the insertion-ordered shape list (so the
    sequence can be replayed through an incremental state), and a goal
    point kept clear of every obstacle.
    """
    from harmonic_nav.world import circumradius, ray_to_boundary

    rng = np.random.default_rng(seed)
    goal = np.array([2.4, 0.0])
    world = ForestWorld(Circle(np.array([0.0, 0.0]), 3.0,
                               is_workspace_boundary=True))
    if n_obstacles is None:
        n_obstacles = int(rng.integers(3, 9))

    def random_shape(center, size):
        if rng.random() < 0.5:
            return Circle(center, size)
        aspect = rng.uniform(0.5, 1.0)
        return Squircle(center, np.array([size, size * aspect]),
                        rng.uniform(0.2, 0.9))

    shapes = []
    while len(shapes) < n_obstacles:
        for _ in range(80):
            parents = [n for n in world.obstacles() if n.depth < depth_cap]
            if parents and rng.random() < 0.45:
                parent = parents[int(rng.integers(len(parents)))]
                ang = rng.uniform(-np.pi, np.pi)
                d = np.array([np.cos(ang), np.sin(ang)])
                reach = ray_to_boundary(parent.shape, parent.shape.center,
                                        d[None])[0]
                center = parent.shape.center + d * reach * rng.uniform(0.8,
                                                                       1.0)
                size = reach * rng.uniform(0.35, 0.6)
                want_parent = parent.node_id
            else:
                center = rng.uniform(-2.0, 2.0, 2)
                size = rng.uniform(0.15, 0.4)
                want_parent = None
            shape = random_shape(center, size)
            trial = world.clone()
            try:
                node = trial.insert_obstacle(shape)
            except Exception:
                continue
            if node.parent != want_parent:
                continue
            if trial.clearance(goal[None])[0] < 0.15:
                continue
            world.insert_obstacle(shape)
            shapes.append(shape)
            break
        else:
            break
    return world, shapes, goal


def free_samples(world, n, seed, margin=0.03, keep_out=None, radius=0.05):
    """Uniform free-space samples with a clearance margin."""
    bound = world.boundary
    if isinstance(bound, Circle):
        lo = bound.center - bound.radius
        hi = bound.center + bound.radius
    else:
        lo = bound.center - bound.half_widths
        hi = bound.center + bound.half_widths
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        pts = rng.uniform(lo, hi, size=(4 * n, 2))
        pts = pts[world.clearance(pts) > margin]
        if keep_out is not None:
            pts = pts[np.linalg.norm(pts - keep_out, axis=-1) > radius]
        out.extend(pts.tolist())
    return np.array(out[:n])
