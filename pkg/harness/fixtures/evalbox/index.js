function evaluate(expression, scope) {
  const names = Object.keys(scope || {});
  const values = names.map((name) => (scope || {})[name]);
  const body = `return (${expression});`;
  const fn = new Function(...names, body);
  return fn(...values);
}

module.exports = { evaluate };
