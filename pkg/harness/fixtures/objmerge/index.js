function isPlainObject(value) {
  return value !== null && typeof value === 'object' && !Array.isArray(value);
}

function merge(target, source) {
  for (const key in source) {
    const incoming = source[key];
    if (isPlainObject(incoming)) {
      if (!isPlainObject(target[key])) {
        target[key] = {};
      }
      merge(target[key], incoming);
    } else {
      target[key] = incoming;
    }
  }
  return target;
}

module.exports = { merge };
